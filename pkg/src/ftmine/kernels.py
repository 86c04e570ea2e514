"""Hot-loop backend selection.

The compiled extension is used when it imports; setting ``FTMINE_PURE=1``
forces the pure-Python fallback.  Both expose identical functions.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("FTMINE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

encode_transactions = _impl.encode_transactions
decode_transactions = _impl.decode_transactions
count_items = _impl.count_items
order_transaction = _impl.order_transaction
tree_insert = _impl.tree_insert
euclidean = _impl.euclidean
knn_block = _impl.knn_block

__all__ = [
    "BACKEND",
    "count_items",
    "decode_transactions",
    "encode_transactions",
    "euclidean",
    "knn_block",
    "order_transaction",
    "tree_insert",
]
