"""Contrastive pretraining and evaluation of encoders."""
from tobias.ssl.evaluate import FinetuneConfig, LinearEvalConfig, finetune, linear_eval
from tobias.ssl.losses import (contrastive_loss, contrastive_loss_and_grad, l_self, l_tobias,
                               positive_share)
from tobias.ssl.train import SslConfig, TrainState, new_state, pretrain

__all__ = ["FinetuneConfig", "LinearEvalConfig", "SslConfig", "TrainState", "contrastive_loss",
           "contrastive_loss_and_grad", "finetune", "l_self", "l_tobias", "linear_eval", "new_state",
           "positive_share", "pretrain"]
