"""Persistence helpers for connections (JSON documents)."""

from pathlib import Path
from typing import Dict

from isomlab_utils.serialization import (
    decode_complex,
    decode_matrix,
    dumps,
    encode_complex,
    encode_matrix,
    loads,
)
from isomonodromy.connection import RationalConnection
from isomonodromy.errors import ConnectionSpecError


def connection_to_dict(c: RationalConnection) -> Dict:
    return {
        "poles": [{"re": v[0], "im": v[1]} for v in (encode_complex(a) for a in c.poles)],
        "ranks": list(c.ranks),
        "coeffs": [[encode_matrix(B) for B in block] for block in c.coeffs],
        "normalization": c.normalization,
    }


def connection_from_dict(d: Dict) -> RationalConnection:
    try:
        poles = [decode_complex(p) for p in d["poles"]]
        ranks = [int(r) for r in d["ranks"]]
        coeffs = [[decode_matrix(B) for B in block] for block in d["coeffs"]]
        normalization = d.get("normalization", "trivial")
    except (KeyError, TypeError, ValueError) as e:
        raise ConnectionSpecError(f"malformed connection document: {e}") from e
    return RationalConnection(
        poles=poles, ranks=tuple(ranks), coeffs=tuple(coeffs), normalization=normalization
    )


def dump_connection(c: RationalConnection, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(connection_to_dict(c)))


def load_connection(path) -> RationalConnection:
    return connection_from_dict(loads(Path(path).read_bytes()))
