"""Synthetic KDD Cup 99-style corpora for tests, fixtures and demos.

Each raw label gets a hand-written traffic profile loosely modelled on the
public corpus (smurf floods are ICMP echo replies of 1032 bytes, neptune is
a SYN flood with serror_rate 1, ...). A configurable fraction of records is
drawn from another label's profile so classifiers cannot reach 100%.
"""

from __future__ import annotations

import gzip
import os
from typing import Callable

import numpy as np

from .dataset import FeatureSchema, LabelCensus, load_schema
from .rng import SplitMix64

TABLE1_COUNTS = {
    "smurf": 2807886, "neptune": 1072017, "back": 2203, "pod": 264, "teardrop": 979,
    "buffer_overflow": 30, "loadmodule": 9, "perl": 3, "rootkit": 10,
    "ftp_write": 8, "guess_passwd": 53, "imap": 12, "multihop": 7, "phf": 4, "spy": 2,
    "warezclient": 1020, "warezmaster": 20,
    "ipsweep": 12481, "nmap": 2316, "portsweep": 10413, "satan": 15892,
    "normal": 972781,
}
# Present in the public file but absent from the reference census table.
LAND_COUNT = 21

Gen = Callable[[SplitMix64, int], np.ndarray]


def const(v) -> Gen:
    return lambda s, n: np.full(n, v, dtype=object)


def ints(lo: int, hi: int) -> Gen:
    return lambda s, n: (lo + s.below(hi - lo + 1, n)).astype(object)


def logint(lo: float, hi: float) -> Gen:
    def gen(s, n):
        u = s.random(n)
        return np.floor(np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo)))).astype(np.int64).astype(object)
    return gen


def rate(lo: float, hi: float) -> Gen:
    return lambda s, n: np.char.mod("%.2f", np.round(lo + s.random(n) * (hi - lo), 2)).astype(object)


def pick(*options, weights=None) -> Gen:
    opts = np.array(options, dtype=object)
    w = np.ones(len(opts)) if weights is None else np.asarray(weights, dtype=float)
    cdf = np.cumsum(w / w.sum())

    def gen(s, n):
        idx = np.minimum(np.searchsorted(cdf, s.random(n), side="right"), len(opts) - 1)
        return opts[idx]
    return gen


_LOGIN = {"logged_in": const(1)}

PROFILES: dict[str, dict[str, Gen]] = {
    "normal": {
        "protocol_type": pick("tcp", "udp", "icmp", weights=[80, 15, 5]),
        "service": pick("http", "smtp", "ftp_data", "domain_u", "private", "ecr_i", "other",
                        weights=[55, 12, 10, 10, 5, 4, 4]),
        "flag": pick("SF", "REJ", "S1", "RSTO", weights=[94, 3, 2, 1]),
        "duration": pick(0, 0, 0, 1, 2, 5),
        "src_bytes": logint(40, 3000), "dst_bytes": logint(100, 60000),
        "logged_in": pick(1, 0, weights=[85, 15]), "hot": pick(0, 0, 0, 1),
        "count": ints(1, 30), "srv_count": ints(1, 40),
        "same_srv_rate": rate(0.8, 1.0), "diff_srv_rate": rate(0.0, 0.1),
        "srv_diff_host_rate": rate(0.0, 0.3),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 255),
        "dst_host_same_srv_rate": rate(0.5, 1.0), "dst_host_diff_srv_rate": rate(0.0, 0.1),
        "dst_host_same_src_port_rate": rate(0.0, 0.2), "dst_host_srv_diff_host_rate": rate(0.0, 0.1),
    },
    "smurf": {
        "protocol_type": const("icmp"), "service": const("ecr_i"), "flag": const("SF"),
        "src_bytes": pick(1032, 520, weights=[9, 1]),
        "count": ints(480, 511), "srv_count": ints(480, 511), "same_srv_rate": const("1.00"),
        "dst_host_count": const(255), "dst_host_srv_count": const(255),
        "dst_host_same_srv_rate": const("1.00"), "dst_host_same_src_port_rate": rate(0.9, 1.0),
    },
    "neptune": {
        "protocol_type": const("tcp"), "service": pick("private", "other", "http", "telnet", weights=[7, 1, 1, 1]),
        "flag": pick("S0", "REJ", weights=[8, 2]),
        "count": ints(90, 300), "srv_count": ints(1, 25),
        "serror_rate": rate(0.9, 1.0), "srv_serror_rate": rate(0.9, 1.0),
        "same_srv_rate": rate(0.0, 0.1), "diff_srv_rate": rate(0.05, 0.1),
        "dst_host_count": const(255), "dst_host_srv_count": ints(1, 25),
        "dst_host_same_srv_rate": rate(0.0, 0.1), "dst_host_diff_srv_rate": rate(0.05, 0.1),
        "dst_host_serror_rate": rate(0.9, 1.0), "dst_host_srv_serror_rate": rate(0.9, 1.0),
    },
    "back": {
        "protocol_type": const("tcp"), "service": const("http"), "flag": pick("SF", "RSTR", weights=[9, 1]),
        "src_bytes": ints(54000, 54540), "dst_bytes": ints(7300, 8314), "hot": const(2), **_LOGIN,
        "count": ints(1, 10), "srv_count": ints(1, 10), "same_srv_rate": const("1.00"),
        "dst_host_count": ints(50, 255), "dst_host_srv_count": ints(50, 255),
        "dst_host_same_srv_rate": const("1.00"),
    },
    "pod": {
        "protocol_type": const("icmp"), "service": pick("ecr_i", "tim_i"), "flag": const("SF"),
        "src_bytes": const(1480), "wrong_fragment": const(1), "count": ints(1, 5), "srv_count": ints(1, 5),
        "dst_host_count": ints(1, 100), "dst_host_srv_count": ints(1, 100),
    },
    "teardrop": {
        "protocol_type": const("udp"), "service": const("private"), "flag": const("SF"),
        "src_bytes": const(28), "wrong_fragment": const(3), "count": ints(1, 100), "srv_count": ints(1, 100),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 100),
    },
    "buffer_overflow": {
        "protocol_type": const("tcp"), "service": pick("telnet", "ftp_data"), "flag": const("SF"),
        "duration": ints(20, 300), "src_bytes": ints(1000, 3000), "dst_bytes": ints(2000, 12000),
        "hot": ints(1, 3), **_LOGIN, "root_shell": const(1), "num_file_creations": ints(0, 2),
        "count": ints(1, 3), "srv_count": ints(1, 3), "same_srv_rate": const("1.00"),
        "dst_host_count": ints(1, 30), "dst_host_srv_count": ints(1, 30),
    },
    "loadmodule": {
        "protocol_type": const("tcp"), "service": const("telnet"), "flag": const("SF"),
        "duration": ints(50, 200), "src_bytes": ints(800, 2000), "dst_bytes": ints(1500, 5000),
        "hot": ints(1, 2), **_LOGIN, "root_shell": pick(0, 1), "num_file_creations": ints(1, 2),
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 10), "dst_host_srv_count": ints(1, 10),
    },
    "perl": {
        "protocol_type": const("tcp"), "service": const("telnet"), "flag": const("SF"),
        "duration": ints(30, 120), "src_bytes": ints(1000, 1600), "dst_bytes": ints(2000, 3000),
        "hot": ints(2, 3), **_LOGIN, "root_shell": const(1), "num_root": ints(1, 3),
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 5), "dst_host_srv_count": ints(1, 5),
    },
    "rootkit": {
        "protocol_type": pick("tcp", "udp"), "service": pick("telnet", "other"), "flag": const("SF"),
        "duration": ints(0, 100), "src_bytes": ints(20, 1500), "dst_bytes": ints(0, 3000),
        "hot": ints(0, 2), "logged_in": pick(0, 1), "root_shell": pick(0, 1),
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 20), "dst_host_srv_count": ints(1, 20),
    },
    "ftp_write": {
        "protocol_type": const("tcp"), "service": pick("ftp", "ftp_data", "login"), "flag": const("SF"),
        "duration": ints(0, 20), "src_bytes": ints(100, 700), "dst_bytes": ints(0, 2000),
        "hot": ints(0, 2), **_LOGIN, "num_file_creations": ints(0, 2), "num_access_files": ints(0, 1),
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 10), "dst_host_srv_count": ints(1, 10),
    },
    "guess_passwd": {
        "protocol_type": const("tcp"), "service": pick("telnet", "pop_3", weights=[9, 1]),
        "flag": pick("RSTO", "SF", weights=[7, 3]),
        "duration": ints(1, 5), "src_bytes": ints(110, 130), "dst_bytes": ints(170, 180),
        "num_failed_logins": const(1), "count": const(1), "srv_count": const(1),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 60),
        "dst_host_rerror_rate": rate(0.3, 0.7), "dst_host_srv_rerror_rate": rate(0.5, 1.0),
    },
    "imap": {
        "protocol_type": const("tcp"), "service": const("imap4"), "flag": pick("SF", "SH", "S3", "RSTO"),
        "duration": ints(0, 10), "src_bytes": ints(0, 2000), "dst_bytes": ints(0, 4000),
        "count": ints(1, 3), "srv_count": ints(1, 3), "dst_host_count": ints(1, 50), "dst_host_srv_count": ints(1, 50),
    },
    "multihop": {
        "protocol_type": const("tcp"), "service": pick("telnet", "ftp_data"), "flag": const("SF"),
        "duration": ints(100, 2000), "src_bytes": ints(200, 1500), "dst_bytes": ints(1000, 20000),
        "hot": ints(1, 4), **_LOGIN, "count": const(1), "srv_count": const(1),
        "dst_host_count": ints(1, 10), "dst_host_srv_count": ints(1, 10),
    },
    "phf": {
        "protocol_type": const("tcp"), "service": const("http"), "flag": const("SF"),
        "src_bytes": ints(45, 55), "dst_bytes": ints(1000, 5000), "hot": const(2), **_LOGIN,
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 10), "dst_host_srv_count": ints(1, 10),
    },
    "spy": {
        "protocol_type": const("tcp"), "service": const("telnet"), "flag": const("SF"),
        "duration": ints(10000, 30000), "src_bytes": ints(1000, 40000), "dst_bytes": ints(1000, 40000),
        "hot": ints(1, 10), **_LOGIN, "count": const(1), "srv_count": const(1),
        "dst_host_count": ints(1, 5), "dst_host_srv_count": ints(1, 5),
    },
    "warezclient": {
        "protocol_type": const("tcp"), "service": pick("ftp_data", "ftp", weights=[7, 3]), "flag": const("SF"),
        "duration": ints(0, 300), "src_bytes": ints(100000, 400000), "dst_bytes": const(0),
        "hot": ints(0, 28), **_LOGIN, "is_guest_login": const(1),
        "count": ints(1, 5), "srv_count": ints(1, 5), "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 100),
    },
    "warezmaster": {
        "protocol_type": const("tcp"), "service": const("ftp"), "flag": const("SF"),
        "duration": ints(20, 60), "src_bytes": ints(300, 1000), "dst_bytes": ints(1000000, 6000000),
        "hot": ints(20, 30), **_LOGIN, "is_guest_login": const(1),
        "count": const(1), "srv_count": const(1), "dst_host_count": ints(1, 10), "dst_host_srv_count": ints(1, 10),
    },
    "ipsweep": {
        "protocol_type": pick("icmp", "tcp", weights=[9, 1]), "service": pick("eco_i", "ecr_i", "private", weights=[8, 1, 1]),
        "flag": const("SF"), "src_bytes": pick(8, 18, 20),
        "count": ints(1, 2), "srv_count": ints(1, 30), "srv_diff_host_rate": rate(0.5, 1.0),
        "dst_host_count": ints(1, 100), "dst_host_srv_count": ints(1, 100),
        "dst_host_diff_srv_rate": rate(0.0, 0.1), "dst_host_same_src_port_rate": rate(0.5, 1.0),
        "dst_host_srv_diff_host_rate": rate(0.3, 1.0),
    },
    "nmap": {
        "protocol_type": pick("icmp", "tcp", "udp"), "service": pick("private", "other", "eco_i"),
        "flag": pick("SF", "REJ", "S0", "SH"), "src_bytes": pick(0, 8, 18),
        "count": ints(1, 5), "srv_count": ints(1, 5), "diff_srv_rate": rate(0.0, 1.0),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 10),
        "dst_host_diff_srv_rate": rate(0.5, 1.0), "dst_host_same_src_port_rate": rate(0.5, 1.0),
    },
    "portsweep": {
        "protocol_type": const("tcp"), "service": pick("private", "other", "ftp_data", weights=[6, 2, 2]),
        "flag": pick("REJ", "RSTR", "RSTOS0", "SF", weights=[4, 4, 1, 1]),
        "duration": pick(0, 0, 0, 1000, 20000),
        "count": ints(1, 5), "srv_count": ints(1, 5), "rerror_rate": rate(0.5, 1.0), "srv_rerror_rate": rate(0.5, 1.0),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 10),
        "dst_host_srv_diff_host_rate": rate(0.5, 1.0), "dst_host_rerror_rate": rate(0.5, 1.0),
        "dst_host_srv_rerror_rate": rate(0.5, 1.0),
    },
    "satan": {
        "protocol_type": pick("tcp", "udp", "icmp", weights=[8, 1, 1]),
        "service": pick("private", "other", "http", "telnet", "finger", "ftp", "smtp", "domain"),
        "flag": pick("REJ", "S0", "SF", "RSTO", weights=[5, 2, 2, 1]),
        "count": ints(1, 500), "srv_count": ints(1, 5), "rerror_rate": rate(0.5, 1.0), "srv_rerror_rate": rate(0.5, 1.0),
        "same_srv_rate": rate(0.0, 0.1), "diff_srv_rate": rate(0.5, 1.0),
        "dst_host_count": ints(1, 255), "dst_host_srv_count": ints(1, 10),
        "dst_host_diff_srv_rate": rate(0.5, 1.0), "dst_host_rerror_rate": rate(0.5, 1.0),
    },
    "land": {
        "protocol_type": const("tcp"), "service": pick("finger", "telnet", "http"), "flag": const("S0"),
        "land": const(1), "count": const(1), "srv_count": const(1),
        "serror_rate": const("1.00"), "srv_serror_rate": const("1.00"),
        "dst_host_count": ints(1, 50), "dst_host_srv_count": ints(1, 50),
    },
}


def full_corpus_counts() -> dict[str, int]:
    counts = dict(TABLE1_COUNTS)
    counts["land"] = LAND_COUNT
    return counts


def scaled_counts(total: int, base: dict[str, int] | None = None) -> dict[str, int]:
    """Shrink a census to ``total`` records keeping every label present.

    Each label gets ``max(1, round(share))`` records; normal absorbs the
    remainder so the sum is exact.
    """
    base = base or full_corpus_counts()
    grand = sum(base.values())
    out = {k: max(1, round(v * total / grand)) for k, v in base.items()}
    anchor = "normal" if "normal" in out else max(out, key=out.get)
    out[anchor] += total - sum(out.values())
    if out[anchor] < 1:
        raise ValueError(f"total {total} too small for {len(base)} labels")
    return out


def _block(label: str, n: int, stream: SplitMix64, schema: FeatureSchema) -> list[np.ndarray]:
    profile = PROFILES[label]
    cols = []
    for col in schema.columns:
        gen = profile.get(col.name)
        if gen is None:
            rate_col = col.name.endswith("_rate")
            gen = const("0.00" if rate_col else 0)
        cols.append(gen(stream.spawn(label, col.name), n))
    return cols


def generate_lines(counts: dict[str, int], seed: int = 0, noise: float = 0.02,
                   schema: FeatureSchema | None = None) -> list[str]:
    """KDD text lines (with trailing period labels) in a seeded random order."""
    schema = schema or load_schema()
    root = SplitMix64.derive(seed, "synthetic")
    labels = [k for k in counts if counts[k] > 0]
    lines: list[str] = []
    for label in labels:
        n = counts[label]
        s = root.spawn(label)
        cols = _block(label, n, s.spawn("own"), schema)
        if noise > 0 and len(labels) > 1:
            flip = s.spawn("flip").random(n) < noise
            others = [k for k in labels if k != label]
            donor = s.spawn("donor").below(len(others), n)
            for d in np.unique(donor[flip]):
                rows = np.flatnonzero(flip & (donor == d))
                alt = _block(others[d], len(rows), s.spawn("alt", others[d]), schema)
                for c, a in zip(cols, alt):
                    c[rows] = a
        tag = label + "."
        lines.extend(",".join(map(str, row)) + "," + tag for row in zip(*cols))
    order = root.spawn("order").permutation(len(lines))
    return [lines[i] for i in order]


def write_corpus(path: str | os.PathLike, counts: dict[str, int], seed: int = 0,
                 noise: float = 0.02, compress: bool = False) -> LabelCensus:
    """Write a synthetic corpus; returns the census the generator intended."""
    text = "\n".join(generate_lines(counts, seed, noise)) + "\n"
    data = text.encode("ascii")
    if compress:
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as fh:
        fh.write(data)
    return LabelCensus({k: v for k, v in counts.items() if v > 0})
