"""Save and restore a BALI model as a single ``.npz`` file.

Arrays hold the per-layer statistics, posterior parameters and current
weights; a JSON string under ``meta`` holds the configuration, layer specs,
step counters and RNG states. Layer posteriors are rebuilt on load from the
stored statistics with the same routine used in training, so a resumed run
continues bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .datasets import Standardizer
from .inference import BaliConfig, BaliModel, EmaState, _initial_layer, recompute_posterior
from .linalg import RngStream
from .network import LayerSpec

FORMAT_VERSION = 1


def save_checkpoint(model: BaliModel, path, x_stats: Standardizer | None = None, y_stats: Standardizer | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": FORMAT_VERSION,
        "config": asdict(model.config),
        "specs": [asdict(s) for s in model.specs],
        "layers": [
            {"t": e.t, "b": e.b, "u": lp.post.u, "rng": rng.get_state()}
            for e, lp, rng in zip(model.emas, model.layers, model.rngs)
        ],
    }
    arrays = {}
    for l, (e, lp) in enumerate(zip(model.emas, model.layers)):
        arrays.update({
            f"l{l}_xx": e.xx, f"l{l}_xy": e.xy, f"l{l}_yy": e.yy, f"l{l}_gg": e.gg,
            f"l{l}_M": lp.post.M, f"l{l}_R": lp.post.R, f"l{l}_U": lp.post.U, f"l{l}_W": lp.W,
        })
    for name, st in (("x", x_stats), ("y", y_stats)):
        if st is not None:
            arrays[f"{name}_mean"] = st.mean
            arrays[f"{name}_std"] = st.std
    arrays["meta"] = np.array(json.dumps(meta))
    with path.open("wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[BaliModel, Standardizer | None, Standardizer | None]:
    """Model plus the input and target standardizers saved with it (or None)."""
    with np.load(Path(path), allow_pickle=False) as z:
        data = {k: z[k] for k in z.files}
    meta = json.loads(str(data["meta"]))
    if meta.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")
    cfg = meta["config"]
    cfg["beta_milestones"] = tuple(cfg["beta_milestones"])
    config = BaliConfig(**cfg)
    specs = [LayerSpec(**s) for s in meta["specs"]]
    priors = [config.prior_for(s) for s in specs]
    emas, layers, rngs = [], [], []
    for l, (info, prior) in enumerate(zip(meta["layers"], priors)):
        e = EmaState(data[f"l{l}_xx"], data[f"l{l}_xy"], data[f"l{l}_yy"], data[f"l{l}_gg"], info["t"], info["b"])
        W = data[f"l{l}_W"]
        if e.t == 0:
            lp = _initial_layer(prior, config.n_eff, W)
        else:
            lp = replace(recompute_posterior(e, prior, config.n_eff), W=W)
        emas.append(e)
        layers.append(lp)
        rngs.append(RngStream.from_state(info["rng"]))
    model = BaliModel(specs, config, priors, emas, layers, rngs)
    stats = [
        Standardizer(data[f"{n}_mean"], data[f"{n}_std"]) if f"{n}_mean" in data else None
        for n in ("x", "y")
    ]
    return model, stats[0], stats[1]
