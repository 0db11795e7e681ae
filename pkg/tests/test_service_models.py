"""Service-model payload roundtrips, catalogs, and malformed payloads."""

import random

import pytest

from oranlab.e2sm import (
    Comparator, ControlPolicy, HandoverCommand, HandoverInsert,
    KpmActionDefinition, KpmEventTrigger, KpmIndicationHeader,
    KpmMeasurements, KpmRecord, ModelId, NiMessage, NodeKind, OffsetPolicy,
    RcDomain, RcEventTrigger, RcFunctionDefinition, SchedulerPolicy, Scope,
    SlicePrbQuota, SliceScheduler, encode_payload, metric_catalog, sm_decode,
    sm_encode,
)
from oranlab.errors import InvariantViolation, MalformedPayload, UnknownServiceModel


def roundtrip(payload):
    model, decoded = sm_decode(encode_payload(payload))
    assert decoded == payload
    return model


class TestKpm:
    def test_event_trigger_roundtrip(self):
        assert roundtrip(KpmEventTrigger(100)) == ModelId.KPM

    def test_trigger_band_check(self):
        KpmEventTrigger(100).check()
        with pytest.raises(InvariantViolation):
            KpmEventTrigger(5).check()
        KpmEventTrigger(5).check(band=(1, 10000))

    def test_action_definition_roundtrip(self):
        roundtrip(KpmActionDefinition(
            NodeKind.DU, Scope.slice_(0, "urllc"), ("tx_bytes", "prb_requested")))

    def test_action_definition_rejects_foreign_metric(self):
        with pytest.raises(InvariantViolation):
            KpmActionDefinition(NodeKind.CU_CP, Scope.node(), ("tx_bytes",)).check()

    def test_action_definition_rejects_empty_metrics(self):
        with pytest.raises(InvariantViolation):
            KpmActionDefinition(NodeKind.DU, Scope.node(), ()).check()

    def test_measurements_roundtrip(self):
        payload = KpmMeasurements((
            KpmRecord("tx_bytes", Scope.slice_(0, "embb"), 100, 12345.0),
            KpmRecord("buffer_bytes", Scope.slice_(0, "embb"), 100, 7.0),
            KpmRecord("tx_bytes", Scope.slice_(0, "urllc"), 200, 0.5),
        ))
        roundtrip(payload)

    def test_measurements_timestamps_must_not_decrease(self):
        payload = KpmMeasurements((
            KpmRecord("tx_bytes", Scope.node(), 200, 1.0),
            KpmRecord("tx_bytes", Scope.node(), 100, 1.0),
        ))
        with pytest.raises(InvariantViolation):
            payload.check()

    def test_indication_header_roundtrip(self):
        roundtrip(KpmIndicationHeader("du-0", 4200))


class TestMetricCatalog:
    def test_du_contains_prb_requested(self):
        assert "prb_requested" in metric_catalog(NodeKind.DU)

    def test_cu_cp_contains_connected_ues(self):
        assert "connected_ues" in metric_catalog(NodeKind.CU_CP)

    def test_catalog_snapshot(self):
        assert metric_catalog(NodeKind.DU) == (
            "tx_bytes", "tx_packets", "buffer_bytes",
            "latency_proxy_ms", "prb_granted", "prb_requested")
        assert metric_catalog(NodeKind.CU_UP) == ("pdcp_tx_bytes", "pdcp_queue_bytes")
        assert metric_catalog(NodeKind.CU_CP) == ("connected_ues", "handover_count")

    def test_catalogs_pairwise_disjoint(self):
        kinds = list(NodeKind)
        for i, a in enumerate(kinds):
            for b in kinds[i + 1:]:
                assert not set(metric_catalog(a)) & set(metric_catalog(b))

    def test_ordering_stable(self):
        for kind in NodeKind:
            assert metric_catalog(kind) == metric_catalog(kind)


class TestRc:
    def test_quota_roundtrip(self):
        roundtrip(SlicePrbQuota(0, "urllc", 20, 0.2, 0.6))

    def test_quota_ratio_invariant(self):
        with pytest.raises(InvariantViolation):
            SlicePrbQuota(0, "urllc", 20, 0.7, 0.6).check()

    def test_handover_roundtrip(self):
        roundtrip(HandoverCommand(ue_id=42, target_cell_global_id=2**40))

    def test_handover_insert_roundtrip(self):
        roundtrip(HandoverInsert(7, 0, 1, -80.5, -75.25, b"\x00\x01"))

    def test_offset_policy_roundtrip(self):
        roundtrip(OffsetPolicy("a3_offset_db", 2.0))

    def test_offset_policy_requires_registered_tunable(self):
        with pytest.raises(InvariantViolation):
            OffsetPolicy("no_such_knob", 1.0).check()

    def test_control_policy_nests_a_control(self):
        policy = ControlPolicy(
            "buffer_bytes", Comparator.GT, 50_000.0,
            SlicePrbQuota(0, "embb", 30))
        roundtrip(policy)

    def test_scheduler_policy_roundtrip(self):
        roundtrip(SchedulerPolicy(0, "embb", SliceScheduler.HIGHEST_BUFFER_FIRST))

    def test_rc_support_payloads_roundtrip(self):
        roundtrip(RcEventTrigger())
        roundtrip(RcFunctionDefinition((RcDomain.RESOURCE_ALLOCATION, RcDomain.MOBILITY)))


class TestNi:
    def test_passthrough_identity(self):
        rng = random.Random(3)
        blob = rng.randbytes(64)
        model, decoded = sm_decode(encode_payload(NiMessage("x2", blob)))
        assert model == ModelId.NI
        assert decoded.data == blob
        assert len(decoded.data) == 64


class TestDispatch:
    def test_unknown_model_byte(self):
        with pytest.raises(UnknownServiceModel):
            sm_decode(b"\xff\x01\x00")

    def test_model_mismatch_rejected_at_encode(self):
        with pytest.raises(InvariantViolation):
            sm_encode(ModelId.KPM, SlicePrbQuota(0, "urllc", 1))

    def test_truncated_kpm_indication(self):
        payload = KpmMeasurements((
            KpmRecord("tx_bytes", Scope.node(), 100, 1.0),))
        data = encode_payload(payload)
        with pytest.raises(MalformedPayload):
            sm_decode(data[:-3])

    def test_mutation_fuzz_never_panics(self):
        rng = random.Random(99)
        payloads = [
            encode_payload(KpmEventTrigger(100)),
            encode_payload(SlicePrbQuota(0, "urllc", 20, 0.2, 0.6)),
            encode_payload(HandoverInsert(7, 0, 1, -80.0, -70.0, b"\x01")),
        ]
        for data in payloads:
            for _ in range(200):
                mutated = bytearray(data)
                mutated[rng.randrange(len(mutated))] ^= 1 << rng.randrange(8)
                try:
                    sm_decode(bytes(mutated))
                except (MalformedPayload, UnknownServiceModel):
                    pass

    def test_roundtrip_sweep(self):
        rng = random.Random(5)
        samples = [
            KpmEventTrigger(10), KpmEventTrigger(1000),
            KpmActionDefinition(NodeKind.CU_UP, Scope.node(), ("pdcp_tx_bytes",)),
            KpmIndicationHeader("cu-1", 0),
            SlicePrbQuota(3, "mmtc", 0, 0.0, 0.0),
            HandoverCommand(1, 1),
            OffsetPolicy("a3_offset_db", -1.5),
            SchedulerPolicy(1, "urllc", SliceScheduler.ROUND_ROBIN),
            NiMessage("f1", rng.randbytes(16)),
        ]
        for payload in samples:
            roundtrip(payload)
