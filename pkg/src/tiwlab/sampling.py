"""Generation jobs: a score source + sampler settings -> sample matrix.

The score source is either a trained-network checkpoint or an oracle
mixture (whose exact perturbed score is used). Each run produces a
provenance record (seed, steps, integrator, kind, source hash, n, dim)
that fully determines the output; rerunning a job with the same record
reproduces the matrix bit for bit.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, IoError
from .mixture import GaussianMixture
from .net import load_net
from .sde import SamplerSpec, VpSchedule, reverse_generate


@dataclass
class GenerationJob:
    score_source: object  # checkpoint path (str/Path) or GaussianMixture
    sched: VpSchedule
    spec: SamplerSpec
    n: int
    output: Path = None  # directory for samples.csv + provenance.json

    def __post_init__(self):
        if self.n < 1:
            raise InputError("n must be >= 1")


def _mixture_hash(gm: GaussianMixture):
    blob = json.dumps(gm.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _checkpoint_hash(path):
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}") from e


def _resolve_score_fn(job: GenerationJob):
    src = job.score_source
    if isinstance(src, GaussianMixture):
        def score_fn(X, t):
            return src.perturb(job.sched, t).score(X)
        return score_fn, src.dim, {"source": "oracle", "source_hash": _mixture_hash(src)}
    net, header = load_net(src)
    if net.output_dim != net.input_dim:
        raise IoError(f"corrupt checkpoint {src}: output_dim field does not match "
                      "input_dim for a score network")

    def score_fn(X, t):
        return net.forward(X, t)
    return score_fn, net.input_dim, {"source": str(src),
                                     "source_hash": _checkpoint_hash(src)}


def generate(job: GenerationJob):
    """Run the job; returns (samples, provenance dict), writing files if asked."""
    score_fn, dim, source_info = _resolve_score_fn(job)
    samples = reverse_generate(job.sched, score_fn, job.spec, job.n, dim)
    provenance = {
        "n": job.n,
        "dim": dim,
        **job.spec.to_dict(),
        **source_info,
    }
    if job.output is not None:
        out = Path(job.output)
        out.mkdir(parents=True, exist_ok=True)
        write_samples_csv(out / "samples.csv", samples)
        try:
            (out / "provenance.json").write_text(
                json.dumps(provenance, sort_keys=True, indent=2) + "\n")
        except OSError as e:
            raise IoError(f"cannot write provenance record: {e}") from e
    return samples, provenance


def write_samples_csv(path, samples):
    samples = np.atleast_2d(samples)
    header = ",".join(f"x{i}" for i in range(samples.shape[1]))
    try:
        with open(path, "w", newline="") as f:
            f.write(header + "\n")
            for row in samples:
                f.write(",".join(repr(float(v)) for v in row) + "\n")
    except OSError as e:
        raise IoError(f"cannot write samples to {path}: {e}") from e


def read_samples_csv(path):
    try:
        with open(path) as f:
            header = f.readline()
            if not header.startswith("x0"):
                raise IoError(f"{path} is not a samples CSV (missing x0 header)")
            return np.loadtxt(f, delimiter=",", ndmin=2)
    except OSError as e:
        raise IoError(f"cannot read samples from {path}: {e}") from e
