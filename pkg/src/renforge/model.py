"""The recurrent equilibrium network model class.

Untrained form (fixed reservoir, driven by measured outputs y):

    x(k+1) = A_x x(k) + B_u u(k) + B_s s(k) + B_y y(k)
    s(k)   = act(W_x x(k) + W_u u(k) + W_s s(k) + W_y y(k))
    y(k)   = C x(k) + D u(k) + D_s s(k)

After training the read-out (C, D, D_s), substituting the output relation
gives the closed-loop form with A = A_x + B_y C and so on; see
:func:`assemble_trained`.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import engine
from ._engine_py import EQ_TOL, is_strictly_lower, solve_equilibrium_core
from .activations import ActivationSpec, get_activation
from .errors import DegenerateReference, DimensionMismatch
from .errors import WellPosednessUnknownWarning

#: Default washout: samples discarded to let the random-initialisation
#: transient die out before any data enters a regression.
DEFAULT_WASHOUT = 50

#: Scale of the random initial condition used for training rollouts.
X0_SCALE = 0.1


def _mat(M, rows, cols, name):
    M = np.atleast_2d(np.asarray(M, float))
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    if M.shape != (rows, cols):
        raise DimensionMismatch(f"{name}: expected {(rows, cols)}, got {M.shape}")
    return M


@dataclass(frozen=True)
class ContractionCertificate:
    """Quadratic certificate for the untrained reservoir: P for the state
    metric, Lam the diagonal multiplier, alpha_bar the certified rate."""

    P: np.ndarray
    Lam: np.ndarray
    alpha_bar: float
    lmin: float = 0.0


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed reservoir matrices and dimensions; immutable after generation."""

    n: int
    nu: int
    m: int
    p: int
    A_x: np.ndarray
    B_u: np.ndarray
    B_s: np.ndarray
    B_y: np.ndarray
    W_x: np.ndarray
    W_u: np.ndarray
    W_s: np.ndarray
    W_y: np.ndarray
    activation: ActivationSpec = field(default_factory=lambda: get_activation("tanh"))
    contraction: ContractionCertificate | None = None

    def __post_init__(self):
        n, nu, m, p = self.n, self.nu, self.m, self.p
        object.__setattr__(self, "A_x", _mat(self.A_x, n, n, "A_x"))
        object.__setattr__(self, "B_u", _mat(self.B_u, n, m, "B_u"))
        object.__setattr__(self, "B_s", _mat(self.B_s, n, nu, "B_s"))
        object.__setattr__(self, "B_y", _mat(self.B_y, n, p, "B_y"))
        object.__setattr__(self, "W_x", _mat(self.W_x, nu, n, "W_x"))
        object.__setattr__(self, "W_u", _mat(self.W_u, nu, m, "W_u"))
        object.__setattr__(self, "W_s", _mat(self.W_s, nu, nu, "W_s"))
        object.__setattr__(self, "W_y", _mat(self.W_y, nu, p, "W_y"))

    @property
    def r(self):
        """Regressor width n + m + nu."""
        return self.n + self.m + self.nu

    def has_wellposed_path(self):
        return self.contraction is not None or is_strictly_lower(self.W_s)


@dataclass
class ReadOut:
    """Trainable output map: y = C x + D u + D_s s.

    When a boolean mask triple is attached, the masked-out entries must be
    exactly zero.
    """

    C: np.ndarray
    D: np.ndarray
    D_s: np.ndarray
    mask: tuple | None = None  # (C_mask, D_mask, Ds_mask) boolean arrays

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, float))
        self.D = np.atleast_2d(np.asarray(self.D, float))
        self.D_s = np.asarray(self.D_s, float).reshape(self.C.shape[0], -1)
        if self.mask is not None:
            self.enforce_mask()

    @property
    def theta(self):
        return np.hstack([self.C, self.D, self.D_s])

    @classmethod
    def from_theta(cls, theta, n, m, nu, mask=None):
        theta = np.atleast_2d(np.asarray(theta, float))
        if theta.shape[1] != n + m + nu:
            raise DimensionMismatch(
                f"theta has {theta.shape[1]} columns, expected {n + m + nu}"
            )
        return cls(theta[:, :n], theta[:, n : n + m], theta[:, n + m :], mask=mask)

    def enforce_mask(self):
        Cm, Dm, Dsm = self.mask
        if np.any(self.C[~Cm] != 0) or np.any(self.D[~Dm] != 0) or np.any(self.D_s[~Dsm] != 0):
            raise ValueError("read-out has nonzeros outside its structure mask")


@dataclass(frozen=True)
class TrainedModel:
    """Closed-loop model with the output relation substituted in.

    ``A, B, B_s`` drive the state update and ``W_x, W_u, W_s`` the implicit
    channel; both absorb the output feedback of the parent reservoir.
    """

    hyper: Hyperparameters
    readout: ReadOut
    A: np.ndarray
    B: np.ndarray
    B_s: np.ndarray
    W_x: np.ndarray
    W_u: np.ndarray
    W_s: np.ndarray
    wellposed_lam: np.ndarray | None = None  # diagonal multiplier entries
    diss: object | None = None  # stability.DissCertificate

    @property
    def dims(self):
        h = self.hyper
        return h.n, h.nu, h.m, h.p

    def has_wellposed_path(self):
        return (
            self.wellposed_lam is not None
            or self.diss is not None
            or is_strictly_lower(self.W_s)
        )

    def with_certificates(self, wellposed_lam=None, diss=None):
        return TrainedModel(
            self.hyper, self.readout, self.A, self.B, self.B_s,
            self.W_x, self.W_u, self.W_s,
            wellposed_lam=self.wellposed_lam if wellposed_lam is None else wellposed_lam,
            diss=self.diss if diss is None else diss,
        )


@dataclass
class Trajectory:
    U: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    S: np.ndarray
    T_s: float = 1.0

    def __post_init__(self):
        N = self.U.shape[0]
        if not (self.Y.shape[0] == self.X.shape[0] == self.S.shape[0] == N):
            raise DimensionMismatch("trajectory arrays must have equal length")
        for name in ("U", "Y", "X", "S"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    def __len__(self):
        return self.U.shape[0]


def assemble_trained(hyper: Hyperparameters, readout: ReadOut,
                     wellposed_lam=None, diss=None) -> TrainedModel:
    """Substitute the trained output relation into the reservoir."""
    p, n, m, nu = hyper.p, hyper.n, hyper.m, hyper.nu
    C = _mat(readout.C, p, n, "C")
    D = _mat(readout.D, p, m, "D")
    D_s = _mat(readout.D_s, p, nu, "D_s")
    return TrainedModel(
        hyper=hyper,
        readout=readout,
        A=hyper.A_x + hyper.B_y @ C,
        B=hyper.B_u + hyper.B_y @ D,
        B_s=hyper.B_s + hyper.B_y @ D_s,
        W_x=hyper.W_x + hyper.W_y @ C,
        W_u=hyper.W_u + hyper.W_y @ D,
        W_s=hyper.W_s + hyper.W_y @ D_s,
        wellposed_lam=wellposed_lam,
        diss=diss,
    )


def solve_equilibrium(obj, x, u, y=None, tol=EQ_TOL):
    """Solve the implicit latent equation for one time step.

    ``obj`` is a :class:`Hyperparameters` (untrained form, ``y`` required
    when p > 0) or a :class:`TrainedModel` (``y`` ignored).  Warns when no
    well-posedness path (certificate or triangular feedback) is known.
    """
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    if isinstance(obj, TrainedModel):
        c = obj.W_x @ x + obj.W_u @ u
        W_s = obj.W_s
        act = obj.hyper.activation
        known = obj.has_wellposed_path()
    else:
        c = obj.W_x @ x + obj.W_u @ u
        if obj.p and y is not None:
            c = c + obj.W_y @ np.asarray(y, float)
        W_s = obj.W_s
        act = obj.activation
        known = obj.has_wellposed_path()
    if not known:
        warnings.warn("no well-posedness certificate; equilibrium may not be unique",
                      WellPosednessUnknownWarning)
    return solve_equilibrium_core(c, W_s, act, tol=tol)


def random_x0(n, seed=None, rng=None):
    rng = np.random.default_rng(seed) if rng is None else rng
    return X0_SCALE * rng.standard_normal(n)


def simulate_untrained(hyper: Hyperparameters, U, Y, x0=None, seed=0, tol=EQ_TOL):
    """Teacher-forced rollout of the untrained form on measured (U, Y).

    Returns (X, S) of the same length as the data, with X[0] = x0.
    """
    U = np.atleast_2d(np.asarray(U, float)).reshape(len(U), hyper.m)
    Y = np.atleast_2d(np.asarray(Y, float)).reshape(len(Y), hyper.p)
    if U.shape[0] != Y.shape[0]:
        raise DimensionMismatch("U and Y must have the same length")
    if x0 is None:
        x0 = random_x0(hyper.n, seed=seed)
    return engine.run_recursion(
        hyper.A_x, hyper.B_u, hyper.B_s, hyper.W_x, hyper.W_u, hyper.W_s,
        U, x0, hyper.activation, Y=Y, B_y=hyper.B_y, W_y=hyper.W_y, tol=tol,
    )


def simulate_trained(model: TrainedModel, U, x0=None, T_s=1.0, tol=EQ_TOL) -> Trajectory:
    """Closed-loop rollout of the trained model."""
    h = model.hyper
    U = np.atleast_2d(np.asarray(U, float)).reshape(len(U), h.m)
    if x0 is None:
        x0 = np.zeros(h.n)
    if not model.has_wellposed_path():
        warnings.warn("simulating without a well-posedness certificate",
                      WellPosednessUnknownWarning)
    X, S = engine.run_recursion(
        model.A, model.B, model.B_s, model.W_x, model.W_u, model.W_s,
        U, x0, h.activation, tol=tol,
    )
    Y = X @ model.readout.C.T + U @ model.readout.D.T + S @ model.readout.D_s.T
    return Trajectory(U=U, Y=Y, X=X, S=S, T_s=T_s)


def fit_index(Y_pred, Y_test, tau_w=DEFAULT_WASHOUT):
    """Per-output FIT percentage: 100 * (1 - mean_k |err| / |centered ref|).

    The mean runs over samples after the washout; the reference centering
    uses the same window.  A reference sample closer than 1e-12 to its
    channel average makes the index undefined.
    """
    Yp = np.asarray(Y_pred, float)
    Yt = np.asarray(Y_test, float)
    if Yp.ndim == 1:
        Yp = Yp[:, None]
    if Yt.ndim == 1:
        Yt = Yt[:, None]
    if Yp.shape != Yt.shape:
        raise DimensionMismatch("prediction/reference shape mismatch")
    if Yp.shape[0] <= tau_w:
        raise DimensionMismatch("sequences shorter than the washout")
    Yp = Yp[tau_w:]
    Yt = Yt[tau_w:]
    avg = Yt.mean(axis=0)
    denom = np.abs(Yt - avg)
    if np.any(denom < 1e-12):
        raise DegenerateReference("reference equals its average at some sample")
    ratios = np.abs(Yp - Yt) / denom
    return 100.0 * (1.0 - ratios.mean(axis=0))


# ---------------------------------------------------------------------------
# serialization

FORMAT = "renforge-model"
FORMAT_VERSION = 1


def _arr(M):
    return np.asarray(M, float).tolist()


def hyper_to_dict(hyper: Hyperparameters):
    d = {
        "dims": {"n": hyper.n, "nu": hyper.nu, "m": hyper.m, "p": hyper.p},
        "activation": hyper.activation.name,
        "A_x": _arr(hyper.A_x), "B_u": _arr(hyper.B_u),
        "B_s": _arr(hyper.B_s), "B_y": _arr(hyper.B_y),
        "W_x": _arr(hyper.W_x), "W_u": _arr(hyper.W_u),
        "W_s": _arr(hyper.W_s), "W_y": _arr(hyper.W_y),
    }
    if hyper.contraction is not None:
        c = hyper.contraction
        d["contraction"] = {
            "P": _arr(c.P), "Lam": _arr(c.Lam),
            "alpha_bar": c.alpha_bar, "lmin": c.lmin,
        }
    return d


def hyper_from_dict(d) -> Hyperparameters:
    dims = d["dims"]
    cert = None
    if "contraction" in d:
        c = d["contraction"]
        cert = ContractionCertificate(
            P=np.asarray(c["P"], float), Lam=np.asarray(c["Lam"], float),
            alpha_bar=float(c["alpha_bar"]), lmin=float(c.get("lmin", 0.0)),
        )
    return Hyperparameters(
        n=dims["n"], nu=dims["nu"], m=dims["m"], p=dims["p"],
        A_x=d["A_x"], B_u=d["B_u"], B_s=d["B_s"], B_y=d["B_y"],
        W_x=d["W_x"], W_u=d["W_u"], W_s=d["W_s"], W_y=d["W_y"],
        activation=get_activation(d.get("activation", "tanh")),
        contraction=cert,
    )


def model_to_dict(model: TrainedModel, meta=None):
    d = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "hyper": hyper_to_dict(model.hyper),
        "readout": {
            "C": _arr(model.readout.C),
            "D": _arr(model.readout.D),
            "D_s": _arr(model.readout.D_s),
        },
        "certificates": {},
    }
    if model.wellposed_lam is not None:
        d["certificates"]["wellposed_lam"] = _arr(model.wellposed_lam)
    if model.diss is not None:
        d["certificates"]["diss"] = {
            "P": _arr(model.diss.P), "Q_x": _arr(model.diss.Q_x),
            "Q_u": _arr(model.diss.Q_u), "Lam": _arr(model.diss.Lam),
            "lmin": float(model.diss.lmin),
        }
    if meta:
        d["meta"] = meta
    return d


def model_from_dict(d) -> TrainedModel:
    if d.get("format") != FORMAT:
        raise ValueError("not a renforge model document")
    if int(d.get("version", -1)) > FORMAT_VERSION:
        raise ValueError(f"model document version {d['version']} is newer than supported")
    hyper = hyper_from_dict(d["hyper"])
    ro = d["readout"]
    readout = ReadOut(np.asarray(ro["C"], float), np.asarray(ro["D"], float),
                      np.asarray(ro["D_s"], float))
    certs = d.get("certificates", {})
    wp = certs.get("wellposed_lam")
    diss = None
    if "diss" in certs:
        from .stability import DissCertificate

        c = certs["diss"]
        diss = DissCertificate(
            P=np.asarray(c["P"], float), Q_x=np.asarray(c["Q_x"], float),
            Q_u=np.asarray(c["Q_u"], float), Lam=np.asarray(c["Lam"], float),
            lmin=float(c.get("lmin", 0.0)),
        )
    return assemble_trained(hyper, readout,
                            wellposed_lam=None if wp is None else np.asarray(wp, float),
                            diss=diss)


def save_model(model, path, meta=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, meta=meta), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_hyper(hyper, path, meta=None):
    d = {"format": "renforge-hyper", "version": FORMAT_VERSION,
         "hyper": hyper_to_dict(hyper)}
    if meta:
        d["meta"] = meta
    with open(path, "w") as fh:
        json.dump(d, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_hyper(path) -> Hyperparameters:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format") != "renforge-hyper":
        raise ValueError("not a renforge hyperparameters document")
    return hyper_from_dict(d["hyper"])
