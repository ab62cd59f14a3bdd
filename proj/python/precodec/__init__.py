"""Learned precoding for standard video codecs.

Thin Python layer over the C++ core: resampling, the mock codec, metrics and
BD deltas, RARN precoding, toy training and the gradient suites.
"""

import json as _json

from ._precodec import (
    ConfigError,
    Error,
    InsufficientPoints,
    InvalidArgument,
    InvalidShape,
    IoError,
    ModelError,
    NoOverlap,
    NumericError,
    Rarn,
    bd_quality,
    bd_rate,
    grad_check,
    mock_code_frame,
    output_size,
    psnr,
    qp_step,
    read_y4m,
    resize,
    ssim,
    validate_config,
    write_y4m,
)
from ._precodec import bd_report_json as _bd_report_json
from ._precodec import train_toy as _train_toy


def bd_report(anchor_rates, anchor_quality, test_rates, test_quality):
    """BD-rate, BD-quality, overlap interval and fits as a dict."""
    return _json.loads(_bd_report_json(list(anchor_rates), list(anchor_quality), list(test_rates), list(test_quality)))


def train_toy(config):
    """Run alternate training. `config` is a dict or JSON text.

    Returns (Rarn, report rows as dicts, summary dict).
    """
    text = config if isinstance(config, str) else _json.dumps(config)
    model, csv, summary = _train_toy(text)
    lines = csv.strip().splitlines()
    keys = lines[0].split(",")
    rows = [dict(zip(keys, (float(v) for v in line.split(",")))) for line in lines[1:]]
    for r in rows:
        r["step"] = int(r["step"])
    return model, rows, _json.loads(summary)


__all__ = [n for n in dir() if not n.startswith("_")]
