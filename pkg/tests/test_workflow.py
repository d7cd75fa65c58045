"""Producer/consumer workflow tests: gating, assembly, and activation."""

import random

import pytest
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from karychain.fragments import (
    ClassCode,
    FragmentError,
    KeyScheme,
    PartitionStrategy,
    parse_fragment,
    sha256,
)
from karychain.ledger import Ledger
from karychain.workflow import (
    LAGRANGE,
    NEVILLE,
    AssemblyError,
    DependencyCheckError,
    ExecutionRefused,
    InsufficientSharesError,
    InsufficientSlicesError,
    VerificationFailure,
    assemble,
    execute,
    produce,
    reconstruct_key,
    verify_fragments,
    verify_manifest_anchor,
)

PAYLOAD = b"benign demonstration payload " * 40


def anchored_env(
    payload=PAYLOAD,
    k=4,
    t=4,
    class_code=ClassCode.I_B,
    scheme=KeyScheme.SHAMIR,
    strategy=PartitionStrategy.CONTIGUOUS,
    seed=1234,
    difficulty=4,
):
    rng = random.Random(seed)
    manifest, frags = produce(payload, k, t, class_code, scheme, strategy, rng=rng)
    ledger = Ledger(difficulty=difficulty)
    ledger.submit_anchor(manifest.digest())
    for blob in frags:
        ledger.submit_anchor(sha256(blob))
    _, receipts = ledger.mine_block(now=1_700_000_000)
    receipt_map = {r.target_digest: r for r in receipts}
    return manifest, frags, receipt_map, ledger


class TestProduce:
    def test_four_fragments_and_manifest(self):
        manifest, frags = produce(
            PAYLOAD, 4, 4, ClassCode.I_B, KeyScheme.SHAMIR,
            PartitionStrategy.CONTIGUOUS, rng=random.Random(1),
        )
        assert manifest.k == 4 and len(frags) == 4
        for blob in frags:
            frag = parse_fragment(blob)
            assert frag.dep_digests == ()
            assert frag.slice_digest == manifest.slice_digests[frag.index - 1]

    def test_k1_degenerate_share_is_key(self):
        seed = 77
        manifest, (blob,) = produce(
            PAYLOAD, 1, 1, ClassCode.I_B, KeyScheme.SHAMIR,
            PartitionStrategy.CONTIGUOUS, rng=random.Random(seed),
        )
        key = random.Random(seed).randbytes(32)
        frag = parse_fragment(blob)
        assert frag.share_y == key
        ct = ChaCha20Poly1305(key).decrypt(manifest.nonce, frag.slice, None)
        assert ct == PAYLOAD

    def test_key_absent_from_outputs_when_threshold_above_one(self):
        seed = 99
        manifest, frags = produce(
            PAYLOAD, 4, 2, ClassCode.I_B, KeyScheme.SHAMIR,
            PartitionStrategy.CONTIGUOUS, rng=random.Random(seed),
        )
        key = random.Random(seed).randbytes(32)
        blob_pool = b"".join(frags) + manifest.canonical_bytes()
        assert key not in blob_pool

    def test_empty_payload_rejected(self):
        with pytest.raises(ValueError):
            produce(b"", 2, 2, ClassCode.I_B, KeyScheme.SHAMIR,
                    PartitionStrategy.CONTIGUOUS, rng=random.Random(1))

    def test_xor_scheme_threshold_must_be_k(self):
        with pytest.raises(ValueError):
            produce(PAYLOAD, 4, 2, ClassCode.I_B, KeyScheme.XOR_SPLIT,
                    PartitionStrategy.CONTIGUOUS, rng=random.Random(1))


class TestVerifyFragments:
    def test_all_genuine_all_valid(self):
        manifest, frags, receipts, ledger = anchored_env()
        statuses = verify_fragments(frags, manifest, receipts, ledger)
        assert all(s.ok for s in statuses)
        assert verify_manifest_anchor(manifest, receipts, ledger)

    def test_missing_receipt_reports_unanchored(self):
        manifest, frags, receipts, ledger = anchored_env()
        del receipts[sha256(frags[1])]
        statuses = verify_fragments(frags, manifest, receipts, ledger)
        assert statuses[1].anchored is False
        assert statuses[1].anchor_reason == "unanchored"
        assert statuses[0].ok and statuses[2].ok and statuses[3].ok

    def _tamper_slice(self, blob):
        frag = parse_fragment(blob)
        bad = bytearray(frag.slice)
        bad[0] ^= 0x01
        tampered = type(frag)(
            index=frag.index,
            k=frag.k,
            class_code=frag.class_code,
            share_x=frag.share_x,
            share_y=frag.share_y,
            slice=bytes(bad),
            dep_digests=frag.dep_digests,
        )
        return tampered.serialize()

    def test_ia_tamper_cascades_to_every_dependent(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_A)
        frags = list(frags)
        frags[2] = self._tamper_slice(frags[2])
        statuses = verify_fragments(frags, manifest, receipts, ledger)
        assert statuses[2].slice_ok is False
        for s in statuses:
            if s.index != 3:
                assert s.deps_ok is False
            assert not s.ok

    def test_ic_tamper_hits_exactly_the_predecessor(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_C)
        frags = list(frags)
        frags[1] = self._tamper_slice(frags[1])
        statuses = verify_fragments(frags, manifest, receipts, ledger)
        by_index = {s.index: s for s in statuses}
        assert by_index[2].slice_ok is False
        assert by_index[1].deps_ok is False and by_index[1].slice_ok is True
        assert by_index[3].deps_ok is True and by_index[4].deps_ok is True


class TestAssemble:
    @pytest.mark.parametrize("class_code", list(ClassCode))
    @pytest.mark.parametrize("strategy", list(PartitionStrategy))
    def test_round_trip_all_classes(self, class_code, strategy):
        case_rng = random.Random(f"{class_code.name}/{strategy.value}")
        random_payload = case_rng.randbytes(case_rng.randint(64, 4096))
        manifest, frags, receipts, ledger = anchored_env(
            payload=random_payload, class_code=class_code, strategy=strategy, seed=5
        )
        payload, report = assemble(frags, manifest, receipts, ledger)
        assert payload == random_payload
        assert report.all_valid

    def test_round_trip_xor_scheme(self):
        manifest, frags, receipts, ledger = anchored_env(scheme=KeyScheme.XOR_SPLIT)
        payload, _ = assemble(frags, manifest, receipts, ledger)
        assert payload == PAYLOAD

    def test_methods_agree(self):
        manifest, frags, receipts, ledger = anchored_env(seed=31)
        p1, r1 = assemble(frags, manifest, receipts, ledger, method=LAGRANGE)
        p2, r2 = assemble(frags, manifest, receipts, ledger, method=NEVILLE)
        assert p1 == p2 == PAYLOAD
        assert r1.key_method == LAGRANGE and r2.key_method == NEVILLE
        assert [s.to_json_dict() for s in r1.fragment_statuses] == [
            s.to_json_dict() for s in r2.fragment_statuses
        ]

    def test_threshold_below_k_relaxes_key_not_data(self):
        manifest, frags, receipts, ledger = anchored_env(t=3, seed=8)
        short = [b for b in frags if parse_fragment(b).index != 4]
        # the key alone reconstructs from any 3 fragments and is consistent
        key_a = reconstruct_key(short, manifest)
        key_b = reconstruct_key([frags[0], frags[1], frags[3]], manifest)
        key_c = reconstruct_key(frags, manifest)
        assert key_a == key_b == key_c
        # but assembly still requires every slice
        with pytest.raises(InsufficientSlicesError) as exc:
            assemble(short, manifest, receipts, ledger)
        assert exc.value.indices == (4,)

    def test_too_few_shares_for_key(self):
        manifest, frags, receipts, ledger = anchored_env(t=3, seed=8)
        with pytest.raises(InsufficientSharesError):
            reconstruct_key(frags[:2], manifest)

    def test_xor_key_needs_every_share(self):
        manifest, frags, receipts, ledger = anchored_env(scheme=KeyScheme.XOR_SPLIT)
        with pytest.raises(InsufficientSharesError):
            reconstruct_key(frags[:3], manifest)

    def test_manifest_must_be_anchored(self):
        manifest, frags, receipts, ledger = anchored_env()
        del receipts[manifest.digest()]
        with pytest.raises(VerificationFailure):
            assemble(frags, manifest, receipts, ledger)

    def test_verification_gate_fires_before_decryption(self, rng):
        # mutate any single fragment bit: the refusal must be a parse or
        # verification failure, never an AEAD or plaintext-digest error
        manifest, frags, receipts, ledger = anchored_env(seed=13)
        for _ in range(1000):
            idx = rng.randrange(len(frags))
            blob = bytearray(frags[idx])
            bit = rng.randrange(len(blob) * 8)
            blob[bit // 8] ^= 1 << (bit % 8)
            mutated = list(frags)
            mutated[idx] = bytes(blob)
            with pytest.raises((VerificationFailure, FragmentError)):
                assemble(mutated, manifest, receipts, ledger)

    def test_gate_soundness_exhaustive_on_small_instance(self):
        # flip every byte of every structural artifact of a k=2 instance:
        # the manifest encoding and both fragment blobs; each flip refuses
        manifest, frags, receipts, ledger = anchored_env(
            payload=b"tiny payload for the exhaustive gate", k=2, t=2, seed=21
        )
        mbytes = manifest.canonical_bytes()
        for pos in range(len(mbytes)):
            corrupted = bytearray(mbytes)
            corrupted[pos] ^= 0x01
            try:
                mutated = type(manifest).from_canonical_bytes(bytes(corrupted))
            except Exception:
                continue  # unparseable manifest cannot even reach the gate
            with pytest.raises(AssemblyError):
                assemble(frags, mutated, receipts, ledger)
        for idx in range(2):
            for pos in range(len(frags[idx])):
                corrupted = bytearray(frags[idx])
                corrupted[pos] ^= 0x01
                mutated_frags = list(frags)
                mutated_frags[idx] = bytes(corrupted)
                with pytest.raises((AssemblyError, FragmentError)):
                    assemble(mutated_frags, manifest, receipts, ledger)

    def test_invalid_ledger_refuses(self):
        manifest, frags, receipts, ledger = anchored_env()
        ledger._blocks[1] = ledger._blocks[0]
        with pytest.raises(VerificationFailure):
            assemble(frags, manifest, receipts, ledger)

    def test_unknown_method_rejected(self):
        manifest, frags, receipts, ledger = anchored_env()
        with pytest.raises(ValueError):
            assemble(frags, manifest, receipts, ledger, method="NEWTON")


class TestExecute:
    def test_class_i_trace_is_ordered_and_disjoint(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_B)
        trace = execute(frags, manifest)
        assert [e.index for e in trace] == [1, 2, 3, 4]
        for a, b in zip(trace, trace[1:]):
            assert a.end < b.start

    def test_class_i_runs_in_index_order_even_if_given_shuffled(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_C)
        trace = execute(list(reversed(frags)), manifest)
        assert [e.index for e in trace] == [1, 2, 3, 4]

    def test_class_ii_intervals_pairwise_overlap(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.II)
        trace = execute(frags, manifest)
        assert len(trace) == 4
        assert max(e.start for e in trace) < min(e.end for e in trace)

    def test_class_ii_missing_fragment_refuses(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.II)
        with pytest.raises(ExecutionRefused) as exc:
            execute(frags[:3], manifest)
        assert exc.value.indices == (4,)

    def test_dependency_recheck_aborts_class_ia(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_A)
        frags = list(frags)
        tampered = TestVerifyFragments()._tamper_slice(frags[3])
        frags[3] = tampered
        with pytest.raises(DependencyCheckError) as exc:
            execute(frags, manifest)
        assert exc.value.indices == (1,)

    def test_custom_actions_recorded(self):
        manifest, frags, receipts, ledger = anchored_env(class_code=ClassCode.I_B)
        actions = {2: lambda f: f"custom for {f.index}"}
        trace = execute(frags, manifest, actions=actions)
        assert trace[1].note == "custom for 2"
        assert trace[0].note == "fragment 1 activated"


class TestDeterminism:
    def test_identical_seeds_identical_artifacts(self):
        runs = []
        for _ in range(2):
            manifest, frags, receipts, ledger = anchored_env(seed=2024)
            runs.append(
                (
                    manifest.canonical_bytes(),
                    tuple(frags),
                    tuple(sorted((d.hex(), r.to_json_dict()["block_hash"])
                                 for d, r in receipts.items())),
                    [b.to_json_dict() for b in ledger.blocks],
                )
            )
        assert runs[0] == runs[1]
