"""scikit-learn style wrapper around the training routines."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_sequences, check_targets
from .activations import DiffusedActivation
from .cost import mse
from .model import Dims, forward, init_params, predict
from .optimizer import ContinuationSchedule, StepRule, continuation_train, sgd_train
from .tasks import SequenceDataset

__all__ = ["DiffusionRNNRegressor"]


class DiffusionRNNRegressor(TransformerMixin, RegressorMixin, BaseEstimator):
    """Single-layer recurrent regressor trained by continuation or by SGD.

    Parameters
    ----------
    hidden_units : int, default=10
    activation : {"erf", "sign", "tanh", "relu"}, default="erf"
        Smoothed training needs a closed-form smoothed square, i.e. erf or sign.
    sharpness : float, default=1.0
        Slope parameter ``a`` of the erf activation.
    method : {"diffusion", "sgd"}, default="diffusion"
    sigma0, gamma, n_stages : float, float, int
        Geometric bandwidth ladder ``sigma0 * gamma**k``, ``k < n_stages``,
        followed by a final ``sigma = 0`` rung.
    stage_epochs : int, default=50
        Epoch budget of every positive-bandwidth rung.
    final_epochs : int, optional
        Budget of the ``sigma = 0`` rung (defaults to ``stage_epochs``).
    grad_tol : float, default=1e-4
    eta, floor, normalize :
        Step rule ``max(eta * sigma, floor)``, optionally on the normalized gradient.
    batch_size : int, optional
        Minibatch size; None means full batch (diffusion) or 50 (sgd).
    lr, epochs :
        Learning rate and epoch count of the SGD baseline.
    lam : float, default=1.0
        Weight of the smoothing regularizer.
    init, init_scale :
        Initialization scheme (``"uniform"``, ``"gaussian"``, ``"zeros"``) and scale.
    supervision : {"auto", "all", "last"}, default="auto"
        Which steps enter the fit term. ``"auto"`` uses ``"last"`` when ``y``
        holds one target per sequence and ``"all"`` when it is per step.
    random_state : int, default=0

    Attributes
    ----------
    params_ : RnnParams
    log_ : TrainLog
    n_features_in_ : int
    n_outputs_ : int
    """

    def __init__(
        self,
        hidden_units=10,
        activation="erf",
        sharpness=1.0,
        method="diffusion",
        sigma0=2.0,
        gamma=0.5,
        n_stages=6,
        stage_epochs=50,
        final_epochs=None,
        grad_tol=1e-4,
        eta=0.1,
        floor=1e-3,
        normalize=True,
        batch_size=None,
        lr=0.1,
        epochs=100,
        lam=1.0,
        init="uniform",
        init_scale=0.1,
        supervision="auto",
        random_state=0,
    ):
        self.hidden_units = hidden_units
        self.activation = activation
        self.sharpness = sharpness
        self.method = method
        self.sigma0 = sigma0
        self.gamma = gamma
        self.n_stages = n_stages
        self.stage_epochs = stage_epochs
        self.final_epochs = final_epochs
        self.grad_tol = grad_tol
        self.eta = eta
        self.floor = floor
        self.normalize = normalize
        self.batch_size = batch_size
        self.lr = lr
        self.epochs = epochs
        self.lam = lam
        self.init = init
        self.init_scale = init_scale
        self.supervision = supervision
        self.random_state = random_state

    def _act(self):
        return DiffusedActivation(self.activation, self.sharpness)

    def schedule(self):
        """The bandwidth ladder implied by the current parameters."""
        final = self.stage_epochs if self.final_epochs is None else self.final_epochs
        return ContinuationSchedule.geometric(
            self.sigma0,
            self.gamma,
            self.n_stages,
            max_epochs=[self.stage_epochs] * self.n_stages + [final],
            grad_tol=self.grad_tol,
            batch_size=self.batch_size,
        )

    def _dataset(self, X, y, supervision):
        return SequenceDataset(X, y, task="estimator", supervision=supervision)

    def fit(self, X, y, eval_set=None, stop_at=None):
        """Train on sequences ``X`` (S, T, X) with targets ``y``.

        ``y`` is (S,) or (S, Y) for one target per sequence, or (S, T, Y) for
        per-step targets. ``eval_set=(X_val, y_val)`` is scored after each
        epoch (last-step MSE); ``stop_at`` ends training once that score is
        reached.
        """
        if self.method not in ("diffusion", "sgd"):
            raise ValueError(f"method must be 'diffusion' or 'sgd', got {self.method!r}")
        if self.supervision not in ("auto", "all", "last"):
            raise ValueError(f"supervision must be 'auto', 'all' or 'last', got {self.supervision!r}")
        X = check_sequences(X)
        S, T, n_in = X.shape
        targets, per_step = check_targets(y, S, T)
        supervision = self.supervision
        if supervision == "auto":
            supervision = "all" if per_step else "last"
        data = self._dataset(X, targets, supervision)
        test = None
        if eval_set is not None:
            Xv = check_sequences(eval_set[0], n_in)
            yv, _ = check_targets(eval_set[1], Xv.shape[0], Xv.shape[1])
            test = self._dataset(Xv, yv, supervision)

        self.n_features_in_ = n_in
        self.n_outputs_ = targets.shape[2]
        self._single_output = not per_step and np.ndim(y) == 1
        dims = Dims(n_in, int(self.hidden_units), self.n_outputs_)
        params0 = init_params(dims, self.init, self.init_scale, self.random_state)
        act = self._act()
        if self.method == "diffusion":
            rule = StepRule(self.eta, self.normalize, self.floor)
            self.params_, self.log_ = continuation_train(
                params0, data, act, self.schedule(), rule, self.lam, self.random_state, test, stop_at
            )
        else:
            batch = 50 if self.batch_size is None else min(int(self.batch_size), S)
            self.params_, self.log_ = sgd_train(
                params0, data, act, batch, self.lr, self.epochs, self.random_state, test, stop_at
            )
        return self

    def predict_sequence(self, X):
        """Unsmoothed network output at every step, shape (S, T, Y)."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.n_features_in_)
        return predict(self.params_, X, self._act())

    def predict(self, X):
        """Output at the final step: (S,) for 1-D training targets, else (S, Y)."""
        out = self.predict_sequence(X)[:, -1, :]
        return out[:, 0] if self._single_output else out

    def transform(self, X):
        """Final hidden state ``h(m_T)`` of each sequence, shape (S, H)."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.n_features_in_)
        return np.asarray(forward(self.params_, X, self._act(), 0.0).phi_m[:, -1])

    def test_mse(self, X, y):
        """Last-step mean squared error, the metric used by the training log."""
        check_is_fitted(self, "params_")
        X = check_sequences(X, self.n_features_in_)
        targets, _ = check_targets(y, X.shape[0], X.shape[1])
        return mse(self.params_, self._dataset(X, targets, "last"), self._act())
