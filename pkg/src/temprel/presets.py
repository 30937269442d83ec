"""Named hyperparameter bundles.

Three presets carry the per-dataset settings the experiments settled on
(hidden size, dropout, depth, and the two-stage learning rates); the
fourth covers the shipped synthetic generator and is tuned so the
structured stage has visible work to do at desk scale.  A preset only
pins the keys it names; everything else keeps its default and explicit
overrides still win.
"""

PRESETS: dict[str, dict[str, object]] = {
    "tbdense": {
        "scheme": "dense6",
        "hidden": 60,
        "dropout": 0.5,
        "layers": 1,
        "features": True,
        "direction": "both",
        "lr_local": 2e-3,
        "lr_global": 0.05,
        "lr_decay": 0.7,
    },
    "matres": {
        "scheme": "point4",
        "hidden": 40,
        "dropout": 0.7,
        "layers": 2,
        "features": True,
        "direction": "both",
        "exclude": "VAGUE",
        "lr_local": 2e-3,
        "lr_global": 0.08,
        "lr_decay": 0.7,
    },
    "tcr": {
        "scheme": "point4",
        "hidden": 30,
        "dropout": 0.5,
        "layers": 1,
        "features": True,
        "direction": "both",
        "exclude": "VAGUE",
        "causal": True,
        "lr_local": 2e-3,
        "lr_global": 0.08,
        "lr_decay": 0.9,
    },
    "synthetic": {
        "scheme": "dense6",
        "embeddings": "numeric",
        "d_word": 40,
        "d_pos": 6,
        "d_in": 40,
        "hidden": 40,
        "layers": 1,
        "dropout": 0.0,
        "features": True,
        "direction": "forward",
        "seeds": "0,1,2",
        "lr_local": 2e-3,
        "epochs_local": 40,
        "lr_global": 0.01,
        "epochs_global": 6,
        "lr_decay": 0.8,
        "patience": 6,
    },
}
