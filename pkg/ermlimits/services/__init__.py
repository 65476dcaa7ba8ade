from .dists import NoiseModel, NoiseKind, BinaryLink, LinkKind, nu_f, parse_noise_spec, parse_link_spec
from .moreau import Loss, TabulatedLoss, named_loss, prox, envelope, invert_envelope
from .linlim import alpha_star, solve_system_linear, optimal_loss_linear, h_delta, rls_alpha_sq
from .binlim import sigma_star, solve_system_binary, optimal_loss_binary, H_delta, rls_sigma_sq
from .simlab import run_monte_carlo, fit_rerm, generate_linear, generate_binary, empirical_metrics
