"""End-to-end workflow: produce fragments, verify against the ledger, assemble, run.

Producer side: encrypt the payload with ChaCha20-Poly1305 (empty associated
data, 16-byte tag appended), cut the ciphertext into k slices, split the key
per the chosen scheme, and emit k fragments plus a manifest. The raw key is
never part of any output.

Consumer side: reassembly is gated. Every fragment must carry a verifying
anchor receipt for its whole serialized bytes, match the manifest's slice
digest at its index, satisfy its embedded dependency digests, and agree with
the manifest structurally; the manifest itself must be anchored and the
stored chain must audit clean. Only then is the key reconstructed (Neville
by default, Lagrange as cross-check), the ciphertext reassembled, and the
payload decrypted and digest-checked.

Activation follows the class code: Class I runs actions in index order
(I_A and I_C re-check dependency digests immediately before each
activation), Class II holds all activations at a rendezvous barrier so each
starts before any completes, and refuses outright if a fragment is missing.
"""

from __future__ import annotations

import itertools
import random
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from .fragments import (
    ClassCode,
    Fragment,
    KeyScheme,
    PartitionStrategy,
    PayloadManifest,
    build_fragments,
    dep_indices,
    parse_fragment,
    partition_payload,
    sha256,
    unpartition,
)
from .ledger import AnchorReceipt, Ledger, VerifyResult
from .sharing import (
    SecretShare,
    reconstruct_lagrange,
    reconstruct_neville,
    reconstruct_xor,
    split_secret_shamir,
    split_secret_xor,
)

KEY_LEN = 32
NONCE_LEN = 12

LAGRANGE = "LAGRANGE"
NEVILLE = "NEVILLE"

ActionFn = Callable[[Fragment], str | None]


class AssemblyError(Exception):
    """Base for every reason assembly refuses; carries the offending indices."""

    def __init__(self, message: str, indices: Sequence[int] = ()):
        super().__init__(message)
        self.indices = tuple(indices)


class VerificationFailure(AssemblyError):
    pass


class InsufficientSharesError(AssemblyError):
    pass


class InsufficientSlicesError(AssemblyError):
    pass


class DecryptionError(AssemblyError):
    pass


class PlaintextDigestMismatch(AssemblyError):
    pass


class ExecutionError(Exception):
    def __init__(self, message: str, indices: Sequence[int] = ()):
        super().__init__(message)
        self.indices = tuple(indices)


class ExecutionRefused(ExecutionError):
    """Activation never started (missing fragments)."""


class DependencyCheckError(ExecutionError):
    """A pre-activation dependency re-check failed."""


@dataclass(frozen=True)
class FragmentStatus:
    index: int
    anchored: bool
    anchor_reason: str | None
    slice_ok: bool
    deps_ok: bool
    consistent: bool

    @property
    def ok(self) -> bool:
        return self.anchored and self.slice_ok and self.deps_ok and self.consistent

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "anchored": self.anchored,
            "anchor_reason": self.anchor_reason,
            "slice_ok": self.slice_ok,
            "deps_ok": self.deps_ok,
            "consistent": self.consistent,
            "ok": self.ok,
        }


@dataclass(frozen=True)
class ActivationEvent:
    index: int
    start: int
    end: int
    note: str | None = None

    def to_json_dict(self) -> dict[str, Any]:
        return {"index": self.index, "start": self.start, "end": self.end, "note": self.note}


@dataclass
class AssemblyReport:
    fragment_statuses: tuple[FragmentStatus, ...]
    manifest_anchored: bool
    key_method: str
    decryption_ok: bool
    activation_trace: tuple[ActivationEvent, ...] = field(default_factory=tuple)

    @property
    def all_valid(self) -> bool:
        return self.manifest_anchored and all(s.ok for s in self.fragment_statuses)

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "fragment_statuses": [s.to_json_dict() for s in self.fragment_statuses],
            "manifest_anchored": self.manifest_anchored,
            "key_method": self.key_method,
            "decryption_ok": self.decryption_ok,
            "activation_trace": [e.to_json_dict() for e in self.activation_trace],
        }


# ---------------------------------------------------------------------------
# Producer


def produce(
    payload: bytes,
    k: int,
    threshold: int,
    class_code: ClassCode,
    key_scheme: KeyScheme,
    strategy: PartitionStrategy,
    rng: random.Random | None = None,
    partition_seed: int = 0,
) -> tuple[PayloadManifest, list[bytes]]:
    """Encrypt, fragment, and share the key; returns (manifest, fragment blobs).

    The freshly generated key is used for encryption and the split, then
    dropped; no return value or artifact contains it.
    """
    if not payload:
        raise ValueError("payload must be nonempty")
    rng = rng if rng is not None else random.SystemRandom()
    key = rng.randbytes(KEY_LEN)
    nonce = rng.randbytes(NONCE_LEN)
    ciphertext = ChaCha20Poly1305(key).encrypt(nonce, payload, None)
    if len(ciphertext) < k:
        raise ValueError(f"ciphertext of {len(ciphertext)} bytes cannot fill {k} slices")
    slices = partition_payload(ciphertext, k, strategy, partition_seed)
    if key_scheme is KeyScheme.XOR_SPLIT:
        shares = split_secret_xor(key, k, rng)
    else:
        shares = split_secret_shamir(key, threshold, k, rng)
    manifest = PayloadManifest(
        k=k,
        threshold=threshold,
        class_code=class_code,
        key_scheme=key_scheme,
        partition_strategy=strategy,
        partition_seed=partition_seed,
        nonce=nonce,
        slice_digests=tuple(sha256(s) for s in slices),
        ciphertext_digest=sha256(ciphertext),
        plaintext_digest=sha256(payload),
    )
    return manifest, build_fragments(slices, shares, manifest)


# ---------------------------------------------------------------------------
# Verification


def verify_fragments(
    fragment_blobs: Sequence[bytes],
    manifest: PayloadManifest,
    receipts: Mapping[bytes, AnchorReceipt],
    ledger: Ledger,
) -> list[FragmentStatus]:
    """Independently check anchoring, slice digest, and dependency digests.

    Receipts are keyed by the SHA-256 of the whole serialized fragment.
    A fragment with no receipt reports anchor_reason "unanchored".
    """
    parsed = [parse_fragment(blob) for blob in fragment_blobs]
    by_index: dict[int, Fragment] = {}
    duplicates = set()
    for frag in parsed:
        if frag.index in by_index:
            duplicates.add(frag.index)
        by_index[frag.index] = frag
    statuses = []
    for blob, frag in zip(fragment_blobs, parsed):
        digest = sha256(blob)
        receipt = receipts.get(digest)
        if receipt is None:
            anchored, reason = False, "unanchored"
        else:
            result = ledger.verify_receipt(digest, receipt)
            anchored, reason = result.ok, result.reason
        consistent = (
            frag.k == manifest.k
            and frag.class_code is manifest.class_code
            and 1 <= frag.index <= manifest.k
            and frag.share_x == frag.index
            and frag.index not in duplicates
        )
        slice_ok = (
            1 <= frag.index <= manifest.k
            and frag.slice_digest == manifest.slice_digests[frag.index - 1]
        )
        deps_ok = _deps_satisfied(frag, manifest, by_index)
        statuses.append(
            FragmentStatus(
                index=frag.index,
                anchored=anchored,
                anchor_reason=reason,
                slice_ok=slice_ok,
                deps_ok=deps_ok,
                consistent=consistent,
            )
        )
    return statuses


def _deps_satisfied(
    frag: Fragment, manifest: PayloadManifest, by_index: Mapping[int, Fragment]
) -> bool:
    refs = dep_indices(frag.index, manifest.k, manifest.class_code)
    if len(frag.dep_digests) != len(refs):
        return False
    for dep_digest, ref_index in zip(frag.dep_digests, refs):
        referenced = by_index.get(ref_index)
        if referenced is None or referenced.slice_digest != dep_digest:
            return False
    return True


def verify_manifest_anchor(
    manifest: PayloadManifest,
    receipts: Mapping[bytes, AnchorReceipt],
    ledger: Ledger,
) -> VerifyResult:
    """The manifest's canonical digest must itself be anchored and verifiable."""
    digest = manifest.digest()
    receipt = receipts.get(digest)
    if receipt is None:
        return VerifyResult(False, "unanchored")
    return ledger.verify_receipt(digest, receipt)


# ---------------------------------------------------------------------------
# Key reconstruction and assembly


def reconstruct_key(
    fragment_blobs: Sequence[bytes],
    manifest: PayloadManifest,
    method: str = NEVILLE,
) -> bytes:
    """Rebuild the payload key from the shares embedded in the fragments.

    Needs all k fragments under XOR_SPLIT, any `threshold` under SHAMIR.
    This succeeds independently of slice completeness: the key threshold
    relaxes only the key, never the data.
    """
    if method not in (LAGRANGE, NEVILLE):
        raise ValueError(f"unknown reconstruction method {method!r}")
    parsed = sorted((parse_fragment(b) for b in fragment_blobs), key=lambda f: f.index)
    shares = [SecretShare(x=f.share_x, y=f.share_y) for f in parsed]
    if manifest.key_scheme is KeyScheme.XOR_SPLIT:
        if {f.index for f in parsed} != set(range(1, manifest.k + 1)):
            raise InsufficientSharesError(
                "XOR split needs every fragment's share",
                indices=sorted(set(range(1, manifest.k + 1)) - {f.index for f in parsed}),
            )
        return reconstruct_xor(shares)
    if len(shares) < manifest.threshold:
        raise InsufficientSharesError(
            f"have {len(shares)} shares, need {manifest.threshold}",
            indices=[f.index for f in parsed],
        )
    if method == LAGRANGE:
        return reconstruct_lagrange(shares)
    return reconstruct_neville(shares)


def assemble(
    fragment_blobs: Sequence[bytes],
    manifest: PayloadManifest,
    receipts: Mapping[bytes, AnchorReceipt],
    ledger: Ledger,
    method: str = NEVILLE,
) -> tuple[bytes, AssemblyReport]:
    """Verify everything, reconstruct the key, reassemble, and decrypt.

    Raises a distinct AssemblyError subclass at the first failing gate; the
    failing fragment indices ride on the exception.
    """
    if method not in (LAGRANGE, NEVILLE):
        raise ValueError(f"unknown reconstruction method {method!r}")
    if not ledger.validate_chain():
        raise VerificationFailure("ledger chain failed validation")
    manifest_result = verify_manifest_anchor(manifest, receipts, ledger)
    if not manifest_result:
        raise VerificationFailure(f"manifest anchor invalid: {manifest_result.reason}")
    statuses = verify_fragments(fragment_blobs, manifest, receipts, ledger)
    bad = [s.index for s in statuses if not s.ok]
    if bad:
        raise VerificationFailure(f"fragment verification failed for {bad}", indices=bad)
    present = {s.index for s in statuses}
    missing = sorted(set(range(1, manifest.k + 1)) - present)
    if missing:
        raise InsufficientSlicesError(
            f"fragments {missing} are missing; every slice is required", indices=missing
        )
    key = reconstruct_key(fragment_blobs, manifest, method)
    parsed = sorted((parse_fragment(b) for b in fragment_blobs), key=lambda f: f.index)
    ciphertext = unpartition(
        [f.slice for f in parsed], manifest.partition_strategy, manifest.partition_seed
    )
    if sha256(ciphertext) != manifest.ciphertext_digest:
        raise VerificationFailure("reassembled ciphertext digest mismatch")
    try:
        payload = ChaCha20Poly1305(key).decrypt(manifest.nonce, ciphertext, None)
    except InvalidTag as exc:
        raise DecryptionError("authenticated decryption failed") from exc
    if sha256(payload) != manifest.plaintext_digest:
        raise PlaintextDigestMismatch("recovered payload digest mismatch")
    report = AssemblyReport(
        fragment_statuses=tuple(statuses),
        manifest_anchored=True,
        key_method=method,
        decryption_ok=True,
    )
    return payload, report


# ---------------------------------------------------------------------------
# Activation


def default_action(fragment: Fragment) -> str:
    return f"fragment {fragment.index} activated"


def execute(
    fragment_blobs: Sequence[bytes],
    manifest: PayloadManifest,
    actions: Mapping[int, ActionFn] | None = None,
) -> list[ActivationEvent]:
    """Run each fragment's benign action under the class's execution rule.

    Returns the activation trace ordered by start tick. Ticks come from one
    monotonic logical clock, so ordering and overlap are checkable from the
    trace alone.
    """
    parsed = [parse_fragment(b) for b in fragment_blobs]
    by_index = {f.index: f for f in parsed}
    missing = sorted(set(range(1, manifest.k + 1)) - set(by_index))
    if missing:
        raise ExecutionRefused(f"fragments {missing} are missing", indices=missing)
    actions = actions or {}
    clock = itertools.count(1)
    if manifest.class_code is ClassCode.II:
        return _execute_parallel(by_index, manifest, actions, clock)
    return _execute_sequential(by_index, manifest, actions, clock)


def _run_action(frag: Fragment, actions: Mapping[int, ActionFn]) -> str | None:
    return actions.get(frag.index, default_action)(frag)


def _check_deps_now(frag: Fragment, manifest: PayloadManifest, by_index: Mapping[int, Fragment]) -> None:
    refs = dep_indices(frag.index, manifest.k, manifest.class_code)
    for dep_digest, ref_index in zip(frag.dep_digests, refs):
        referenced = by_index.get(ref_index)
        if referenced is None or referenced.slice_digest != dep_digest:
            raise DependencyCheckError(
                f"fragment {frag.index} dependency on {ref_index} unsatisfied",
                indices=[frag.index],
            )


def _execute_sequential(
    by_index: Mapping[int, Fragment],
    manifest: PayloadManifest,
    actions: Mapping[int, ActionFn],
    clock,
) -> list[ActivationEvent]:
    recheck = manifest.class_code in (ClassCode.I_A, ClassCode.I_C)
    events = []
    for index in range(1, manifest.k + 1):
        frag = by_index[index]
        if recheck:
            _check_deps_now(frag, manifest, by_index)
        start = next(clock)
        note = _run_action(frag, actions)
        end = next(clock)
        events.append(ActivationEvent(index=index, start=start, end=end, note=note))
    return events


def _execute_parallel(
    by_index: Mapping[int, Fragment],
    manifest: PayloadManifest,
    actions: Mapping[int, ActionFn],
    clock,
) -> list[ActivationEvent]:
    # Every activation must be live at once: each thread marks its start,
    # meets the barrier, and only then may any run its action and finish.
    barrier = threading.Barrier(manifest.k)
    lock = threading.Lock()
    events: list[ActivationEvent] = []
    failures: list[Exception] = []

    def activate(frag: Fragment) -> None:
        try:
            with lock:
                start = next(clock)
            barrier.wait(timeout=30)
            note = _run_action(frag, actions)
            with lock:
                end = next(clock)
                events.append(ActivationEvent(index=frag.index, start=start, end=end, note=note))
        except Exception as exc:  # surface worker errors to the caller
            barrier.abort()
            with lock:
                failures.append(exc)

    threads = [
        threading.Thread(target=activate, args=(by_index[i],), name=f"fragment-{i}")
        for i in range(1, manifest.k + 1)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if failures:
        raise ExecutionError(f"parallel activation failed: {failures[0]}")
    events.sort(key=lambda e: e.start)
    return events
