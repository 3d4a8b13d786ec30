from .buffer import ReplayBuffer  # noqa: F401
from .config import BrsConfig  # noqa: F401
from .neural import NeuralBrsTrainer  # noqa: F401
from .ipd import (IpdTrainConfig, AnalyticConfig, train_ipd_brs_tsd,  # noqa: F401
                  naive_learner_duel, train_ipd_brs_analytic,
                  exact_best_response, self_play_step_ipd)
