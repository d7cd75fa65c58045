"""karychain: k-way payload fragmentation gated by a proof-of-existence ledger.

An encrypted payload is cut into k fragment files, the decryption key is
shared across them (additively or with a GF(2^8) threshold scheme), each
fragment's digest is anchored into a toy proof-of-work chain, and reassembly
runs only after every fragment's existence and integrity re-verify against
the stored chain.
"""

from .fragments import (
    ClassCode,
    Fragment,
    FragmentError,
    KeyScheme,
    PartitionStrategy,
    PayloadManifest,
    RecombinationCandidate,
    build_fragments,
    combine,
    is_member,
    parse_fragment,
    partition_payload,
    relate,
    unpartition,
)
from .ledger import (
    AnchorReceipt,
    Block,
    DuplicatePendingError,
    EmptyPoolError,
    Ledger,
    LedgerError,
    ReceiptStore,
    VerifyResult,
    apply_merkle_path,
    block_hash,
    merkle_path_of,
    merkle_root_of,
)
from .sharing import (
    SecretShare,
    gf_inv,
    gf_mul,
    reconstruct_lagrange,
    reconstruct_neville,
    reconstruct_xor,
    split_secret_shamir,
    split_secret_xor,
)
from .workflow import (
    AssemblyError,
    AssemblyReport,
    DecryptionError,
    ExecutionRefused,
    FragmentStatus,
    InsufficientSharesError,
    InsufficientSlicesError,
    PlaintextDigestMismatch,
    VerificationFailure,
    assemble,
    execute,
    produce,
    reconstruct_key,
    verify_fragments,
    verify_manifest_anchor,
)

__version__ = "0.1.0"
