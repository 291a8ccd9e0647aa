"""Unrolled separable network: layers, model, training, inference and parameter I/O."""
from .model import (NetworkParams, count_parameters, init_network, loss, loss_and_grad,
                    network_forward)
from .training import (TrainConfig, build_training_set, count_training_samples, phase_losses,
                       train)
from .infer import infer_volume, sc_postprocess
from .params_io import load_params, save_params
from .gradcheck import gradcheck
