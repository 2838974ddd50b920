"""Precise large-deviation asymptotics for locally infinitely divisible jump-diffusions."""
from .errors import *  # noqa: F401,F403
from .model import (AtomList, Coefficient, Constant, Density, JumpMeasure, ProcessModel, brownian,
                    check_assumptions, cumulant_g0, cumulant_g0_star, cumulant_geps, example1, example2,
                    g0_mixed, g0_partials, model_preset, pide_special, tilted_moments)
from .legendre import h0, h0_array, dh0_du, h_inequality_check, legendre_sup, solve_dual
from .paths import PathGrid, SamplePath, TiltPath, sup_norm
from .functionals import (FunctionalSpec, IntegralTerm, TerminalTerm, GenericTerm, derivative_pairing,
                          eval_functional, functional_preset, q_functional)
from .variational import (ExtremalSolution, action_s, euler_lagrange_shoot, extract_z0, maximize_direct,
                          refine_and_extrapolate)
from .simulate import (SimConfig, simulate_batch, simulate_limit_eta, simulate_original, simulate_tilted,
                       rescale_to_eta)
from .expansion import (CoefficientFit, EstimateRecord, K0Estimate, epsilon_sweep, estimate_k0,
                        estimate_prefactor, fit_prefactors, moment_check, rough_ld_check, tail_probability,
                        tilde_eta_transform)
from .pide import (Grid1D, PideCoefficients, PideSolution, asymptotic_compare, feynman_kac_mc,
                   solve_fd, specific_case_check)

__version__ = "0.1.0"
