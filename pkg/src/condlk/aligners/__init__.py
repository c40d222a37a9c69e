from .cascade import (CONVERGENCE_THRESHOLD, AlignResult, Descriptor, RegressorCascade,
                      RegressorLayer, describe, run_cascade, run_cascade_batch, template_frame_rmse)
from .clk import LMConfig, LMResult, clk_gradient, clk_objective, clk_objective_kron, clk_train, residual_jacobian
from .glk import glk_train
from .lk import (CLKWorkspace, GradientParams, build_R_from_g, build_W, clk_workspace, dR_dg,
                 gradient_matrix, iclk_build, stacked_jacobian)
from .sdm import RidgeSolver, sdm_fit, sdm_train, select_lambda
from .training import (METHODS, TrainConfig, clk_train_cascade, glk_train_cascade, iclk_cascade,
                       sdm_train_cascade, swap_family, train_cascade)
