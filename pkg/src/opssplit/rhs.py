"""Composition of fixed finite-difference terms and learned operator terms
into the right-hand side of the governing equations, du/dt = sum of terms.

Coefficients named in a term (viscosity, adiabatic index) stay injectable at
evaluation time, which is what lets the fixed part of the dynamics follow a
parameter shift the learned part never saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .stencils import StencilKernel, apply_stencil

STATE_WEIGHTS = ("none", "ln-density", "inv-density")


@dataclass
class OperatorTerm:
    """One additive term of the split dynamics."""

    name: str
    kind: str  # "fixed-linear" | "learned"
    in_channels: tuple
    out_channels: tuple
    stencil: StencilKernel | None = None
    model: object | None = None
    coefficient: float = 1.0
    coefficient_name: str | None = None
    state_weight: str = "none"
    weight_channel: int | None = None

    def __post_init__(self):
        if self.kind not in ("fixed-linear", "learned"):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.state_weight not in STATE_WEIGHTS:
            raise ValueError(f"unknown state weight {self.state_weight!r}")
        if self.kind == "fixed-linear":
            if self.stencil is None:
                raise ValueError(f"term {self.name}: fixed-linear needs a stencil")
            if len(self.in_channels) != len(self.out_channels):
                raise ValueError(f"term {self.name}: fixed terms map channels pairwise")
        elif self.model is None:
            raise ValueError(f"term {self.name}: learned term needs a model")
        if not np.isfinite(self.coefficient):
            raise ValueError(f"term {self.name}: coefficient must be finite")


class SplitRHS:
    """Ordered sum of operator terms over a fixed channel schema.

    When built against normalisation statistics, fixed terms that map between
    differently scaled channels are rescaled by range(in)/range(out) so that a
    physical coefficient keeps its meaning on normalised fields; the density
    weight is likewise evaluated on denormalised density.
    """

    def __init__(self, terms, channel_names, spacing, stats=None, coefficients=None):
        self.terms = list(terms)
        self.channel_names = tuple(channel_names)
        self.spacing = tuple(spacing)
        self.stats = stats
        self.coefficients = dict(coefficients or {})
        n = len(self.channel_names)
        covered = set()
        for t in self.terms:
            for c in t.in_channels + t.out_channels:
                if not 0 <= c < n:
                    raise ValueError(f"term {t.name}: channel {c} outside schema of {n}")
            covered.update(t.out_channels)
        self._n_channels = n

    @property
    def n_channels(self):
        return self._n_channels

    def bind(self, tape, trainable=True):
        bound_models = {}
        for t in self.terms:
            if t.kind == "learned" and id(t.model) not in bound_models:
                bound_models[id(t.model)] = t.model.bind(tape, trainable=trainable)
        return BoundRHS(self, tape, bound_models)

    def models(self):
        """Distinct learned models in term order."""
        seen = {}
        for t in self.terms:
            if t.kind == "learned" and id(t.model) not in seen:
                seen[id(t.model)] = t.model
        return list(seen.values())

    def _channel_scale(self, channel):
        if self.stats is None:
            return 1.0
        return 0.5 * (self.stats.maxs[channel] - self.stats.mins[channel])

    def _channel_mid(self, channel):
        if self.stats is None:
            return 0.0
        return 0.5 * (self.stats.maxs[channel] + self.stats.mins[channel])


class BoundRHS:
    """A SplitRHS view bound to one tape; callable on field Variables."""

    def __init__(self, rhs, tape, bound_models):
        self.rhs = rhs
        self.tape = tape
        self.bound_models = bound_models

    def __call__(self, u, coefficients=None, kinds=None):
        """Evaluate du/dt; `kinds` restricts to a subset of term kinds,
        which is how Strang sub-flows split the dynamics."""
        rhs = self.rhs
        if u.data.shape[-3] != rhs.n_channels:
            raise ValueError(
                f"state has {u.data.shape[-3]} channels, schema expects {rhs.n_channels}"
            )
        coeffs = dict(rhs.coefficients)
        if coefficients:
            coeffs.update(coefficients)
        total = None
        terms = rhs.terms if kinds is None else [t for t in rhs.terms if t.kind in kinds]
        for t in terms:
            x = ad.select_channels(u, t.in_channels)
            if t.kind == "fixed-linear":
                y = ad.depthwise_fixed_conv(x, t.stencil.coefficients)
                if t.stencil.kind == "divergence":
                    raise ValueError("divergence kernels are not usable as pairwise fixed terms")
                if rhs.stats is not None:
                    ratio = np.array(
                        [
                            rhs._channel_scale(ci) / rhs._channel_scale(co)
                            for ci, co in zip(t.in_channels, t.out_channels)
                        ]
                    )
                    y = ad.mul(y, self.tape.constant(ratio[:, None, None]))
            else:
                y = t.model.forward(self.bound_models[id(t.model)], x)
            if t.state_weight != "none":
                w = ad.select_channels(u, (t.weight_channel,))
                scale = rhs._channel_scale(t.weight_channel)
                mid = rhs._channel_mid(t.weight_channel)
                if rhs.stats is not None:
                    w = ad.add(
                        ad.mul(w, self.tape.constant(np.float64(scale))),
                        self.tape.constant(np.float64(mid)),
                    )
                if np.any(w.data <= 0):
                    raise ValueError(
                        f"term {t.name}: density must be strictly positive for {t.state_weight}"
                    )
                w = ad.ln(w) if t.state_weight == "ln-density" else ad.div(
                    self.tape.constant(np.ones_like(w.data)), w
                )
                y = ad.mul(y, w)
            c = t.coefficient
            if t.coefficient_name is not None:
                if t.coefficient_name not in coeffs:
                    raise ValueError(f"term {t.name}: no value for coefficient {t.coefficient_name!r}")
                c = c * coeffs[t.coefficient_name]
            if c != 1.0:
                y = ad.mul(y, self.tape.constant(np.float64(c)))
            contrib = ad.embed_channels(y, t.out_channels, rhs.n_channels)
            total = contrib if total is None else ad.add(total, contrib)
        if total is None:
            return self.tape.constant(np.zeros_like(u.data))
        return total


def eval_rhs(rhs, u_array, coefficients=None):
    """Evaluate a SplitRHS on a plain ndarray state (no gradients)."""
    tape = ad.Tape(record=False)
    bound = rhs.bind(tape, trainable=False)
    return bound(tape.variable(u_array), coefficients).data


def build_incompressible_rhs(conv_model, nu, spacing, fd_order=2, stats=None):
    """dv/dt = -(learned convection+pressure term) + nu * laplacian(v)."""
    from .stencils import make_stencil

    if conv_model.config.in_channels != 2 or conv_model.config.out_channels != 2:
        raise ValueError("incompressible convection operator must map 2 channels to 2")
    terms = [
        OperatorTerm(
            name="convection",
            kind="learned",
            in_channels=(0, 1),
            out_channels=(0, 1),
            model=conv_model,
            coefficient=-1.0,
        ),
        OperatorTerm(
            name="diffusion",
            kind="fixed-linear",
            in_channels=(0, 1),
            out_channels=(0, 1),
            stencil=make_stencil("laplacian", fd_order, spacing),
            coefficient=1.0,
            coefficient_name="nu",
        ),
    ]
    return SplitRHS(terms, ("u", "v"), spacing, stats=stats, coefficients={"nu": nu})


def build_compressible_rhs(div_model, conv_model, gamma, spacing, fd_order=2, stats=None,
                           density_weight="ln-density"):
    """Mass, momentum and pressure equations with one shared divergence model.

    d rho/dt = -div_model(rho, v)
    d v/dt   = -conv_model(v) - weight(rho) * grad P      (fixed stencils)
    d P/dt   = -gamma * div_model(P, v)
    """
    from .stencils import make_stencil

    if div_model.config.in_channels != 3 or div_model.config.out_channels != 1:
        raise ValueError("divergence operator must map 3 channels to 1")
    if conv_model.config.in_channels != 2 or conv_model.config.out_channels != 2:
        raise ValueError("convection operator must map 2 channels to 2")
    terms = [
        OperatorTerm(
            name="mass-divergence",
            kind="learned",
            in_channels=(0, 1, 2),
            out_channels=(0,),
            model=div_model,
            coefficient=-1.0,
        ),
        OperatorTerm(
            name="convection",
            kind="learned",
            in_channels=(1, 2),
            out_channels=(1, 2),
            model=conv_model,
            coefficient=-1.0,
        ),
        OperatorTerm(
            name="pressure-grad-x",
            kind="fixed-linear",
            in_channels=(3,),
            out_channels=(1,),
            stencil=make_stencil("grad-x", fd_order, spacing),
            coefficient=-1.0,
            state_weight=density_weight,
            weight_channel=0,
        ),
        OperatorTerm(
            name="pressure-grad-y",
            kind="fixed-linear",
            in_channels=(3,),
            out_channels=(2,),
            stencil=make_stencil("grad-y", fd_order, spacing),
            coefficient=-1.0,
            state_weight=density_weight,
            weight_channel=0,
        ),
        OperatorTerm(
            name="pressure-divergence",
            kind="learned",
            in_channels=(3, 1, 2),
            out_channels=(3,),
            model=div_model,
            coefficient=-1.0,
            coefficient_name="gamma",
        ),
    ]
    return SplitRHS(
        terms, ("rho", "u", "v", "P"), spacing, stats=stats, coefficients={"gamma": gamma}
    )


def parse_term_spec(spec_text):
    """Parse the run-config term-list format into term descriptions.

    Entries are separated by ";"; each entry is
    `kind:operator:in:out:coefficient[:weight@channel]` where
      kind        fixed | learned
      operator    laplacian | grad-x | grad-y (fixed) or a model slot name
      in / out    channel indices joined by "+"
      coefficient a float, a named coefficient, or float*name (e.g. -1*gamma)
      weight      ln-density@<channel> | inv-density@<channel>
    """
    entries = []
    for raw in spec_text.split(";"):
        raw = raw.strip()
        if not raw:
            continue
        parts = [p.strip() for p in raw.split(":")]
        if len(parts) not in (5, 6):
            raise ValueError(f"term entry {raw!r}: expected 5 or 6 fields")
        kind, operator, ins, outs, coeff = parts[:5]
        if kind not in ("fixed", "learned"):
            raise ValueError(f"term entry {raw!r}: kind must be fixed|learned")
        entry = {
            "kind": kind,
            "operator": operator,
            "in_channels": tuple(int(c) for c in ins.split("+")),
            "out_channels": tuple(int(c) for c in outs.split("+")),
            "state_weight": "none",
            "weight_channel": None,
        }
        if "*" in coeff:
            factor, name = coeff.split("*", 1)
            entry["coefficient"] = float(factor)
            entry["coefficient_name"] = name.strip() or None
        else:
            try:
                entry["coefficient"] = float(coeff)
                entry["coefficient_name"] = None
            except ValueError:
                entry["coefficient"] = 1.0
                entry["coefficient_name"] = coeff
        if len(parts) == 6:
            weight, _, channel = parts[5].partition("@")
            if weight not in ("ln-density", "inv-density") or not channel:
                raise ValueError(f"term entry {raw!r}: bad weight {parts[5]!r}")
            entry["state_weight"] = weight
            entry["weight_channel"] = int(channel)
        entries.append(entry)
    if not entries:
        raise ValueError("empty term specification")
    return entries


def build_rhs_from_spec(spec_text, models, channel_names, spacing, fd_order=2,
                        stats=None, coefficients=None):
    """Assemble a SplitRHS from the run-config term-list format.

    `models` maps slot names (the `operator` field of learned entries) to
    OperatorModel instances.
    """
    from .stencils import make_stencil

    terms = []
    for i, e in enumerate(parse_term_spec(spec_text)):
        if e["kind"] == "fixed":
            term = OperatorTerm(
                name=f"term{i}-{e['operator']}",
                kind="fixed-linear",
                in_channels=e["in_channels"],
                out_channels=e["out_channels"],
                stencil=make_stencil(e["operator"], fd_order, spacing),
                coefficient=e["coefficient"],
                coefficient_name=e["coefficient_name"],
                state_weight=e["state_weight"],
                weight_channel=e["weight_channel"],
            )
        else:
            if e["operator"] not in models:
                raise ValueError(f"no model slot {e['operator']!r} for learned term")
            term = OperatorTerm(
                name=f"term{i}-{e['operator']}",
                kind="learned",
                in_channels=e["in_channels"],
                out_channels=e["out_channels"],
                model=models[e["operator"]],
                coefficient=e["coefficient"],
                coefficient_name=e["coefficient_name"],
                state_weight=e["state_weight"],
                weight_channel=e["weight_channel"],
            )
        terms.append(term)
    return SplitRHS(terms, channel_names, spacing, stats=stats, coefficients=coefficients)


def strang_compose(step_a, step_b, h):
    """Second-order composition: B(h/2) after A(h) after B(h/2).

    Both arguments are flow maps `flow(u, h) -> u` preserving the schema.
    """

    def composed(u):
        return step_b(step_a(step_b(u, 0.5 * h), h), 0.5 * h)

    return composed


def lie_compose(step_a, step_b, h):
    """First-order composition: A(h) after B(h)."""

    def composed(u):
        return step_a(step_b(u, h), h)

    return composed
