from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pttrace.errors import MalformedPayload, SchemaMismatch
from pttrace.trace_model import (CATALOG, TEXT_EXEMPT_RUNTIME, FieldType, HotPath, Kind,
                                 Layer, TracepointId, by_name, catalog, check_payload,
                                 conforms, decode_payload, descriptor_of, encode_payload,
                                 payload_size, _check_value)

from _strategies import conforming, payload_for

TP = TracepointId


class TestCatalog:
    def test_totals(self):
        cat = catalog()
        assert len(cat) == 28
        kinds = Counter(d.kind for d in cat)
        assert kinds[Kind.RUNTIME] == 12
        assert kinds[Kind.INITIALIZATION] == 16
        hot = Counter(d.hot_path for d in cat)
        assert hot[HotPath.PUBLISH] == 3
        assert hot[HotPath.RECEIVE] == 7

    def test_layer_blocks_in_order(self):
        layers = [d.layer for d in catalog()]
        assert layers == [Layer.API] * 13 + [Layer.CORE] * 11 + [Layer.TRANSPORT] * 4
        assert [d.id for d in catalog()] == list(TracepointId)

    def test_prefixes_match_layers(self):
        for d in catalog():
            if d.layer is Layer.CORE:
                assert d.name.startswith("core_")
            elif d.layer is Layer.TRANSPORT:
                assert d.name.startswith("transport_")
            else:
                assert not d.name.startswith(("core_", "transport_"))

    def test_hot_path_members(self):
        pub = {d.id for d in catalog() if d.hot_path is HotPath.PUBLISH}
        recv = {d.id for d in catalog() if d.hot_path is HotPath.RECEIVE}
        assert pub == {TP.api_publish, TP.core_publish, TP.transport_publish}
        assert recv == {TP.transport_take, TP.core_take, TP.api_take,
                        TP.api_executor_wait_for_work, TP.api_executor_get_next_ready,
                        TP.api_executor_execute, TP.callback_start}

    def test_runtime_payloads_fixed_width(self):
        for d in catalog():
            if d.kind is Kind.RUNTIME and d.id not in TEXT_EXEMPT_RUNTIME:
                assert FieldType.TEXT not in [ft for _, ft in d.payload_schema], d.name
        assert TEXT_EXEMPT_RUNTIME == {TP.core_lifecycle_transition}

    def test_descriptor_examples(self):
        assert descriptor_of(TP.core_publisher_init).kind is Kind.INITIALIZATION
        assert descriptor_of(TP.transport_publish).hot_path is HotPath.PUBLISH
        assert descriptor_of(TP.callback_end).hot_path is HotPath.NONE

    def test_by_name(self):
        assert by_name("callback_start") is TP.callback_start
        with pytest.raises(KeyError):
            by_name("nope")

    def test_catalog_copy_is_harmless(self):
        cat = catalog()
        cat.clear()
        assert len(catalog()) == 28


class TestCodec:
    def test_callback_start_is_nine_bytes(self):
        d = descriptor_of(TP.callback_start)
        assert len(encode_payload(d, (7, False))) == 9
        assert payload_size(d) == 9

    def test_text_rejected_where_schema_has_none(self):
        with pytest.raises(SchemaMismatch):
            encode_payload(descriptor_of(TP.api_publish), (1, "x"))

    def test_truncated_decode(self):
        with pytest.raises(MalformedPayload):
            decode_payload(descriptor_of(TP.callback_start), bytes(8))

    def test_trailing_bytes(self):
        d = descriptor_of(TP.core_node_init)
        data = encode_payload(d, (1, 2, "talker", "/"))
        with pytest.raises(MalformedPayload):
            decode_payload(d, data + b"\0")
        with pytest.raises(MalformedPayload):
            decode_payload(d, data[:-2])

    def test_text_fixture(self):
        d = descriptor_of(TP.core_node_init)
        raw = (b"\x01" + bytes(7) + b"\x02" + bytes(7) + b"\x06\x00talker" + b"\x01\x00/")
        assert decode_payload(d, raw) == (1, 2, "talker", "/")
        assert encode_payload(d, (1, 2, "talker", "/")) == raw

    def test_little_endian(self):
        d = descriptor_of(TP.core_timer_init)
        assert encode_payload(d, (1, -1)) == b"\x01" + bytes(7) + b"\xff" * 8

    @pytest.mark.parametrize("payload", [
        (1,), (1, 2, 3), (7, 1), (-1, True), (2**64, True), (True, True), (7.0, True),
    ])
    def test_schema_mismatch(self, payload):
        with pytest.raises(SchemaMismatch):
            check_payload(descriptor_of(TP.callback_start), payload)

    def test_codec_accepts_any_sequence(self):
        d = descriptor_of(TP.callback_start)
        assert encode_payload(d, [7, True]) == encode_payload(d, (7, True))

    def test_text_length_limit(self):
        d = descriptor_of(TP.api_callback_register)
        encode_payload(d, (1, "a" * 0xFFFF))
        with pytest.raises(SchemaMismatch):
            encode_payload(d, (1, "a" * 0x10000))
        with pytest.raises(SchemaMismatch):
            encode_payload(d, (1, "é" * 0x8000))  # 2 bytes each in UTF-8

    @settings(max_examples=400, deadline=None)
    @given(conforming())
    def test_round_trip(self, dp):
        desc, payload = dp
        assert decode_payload(desc, encode_payload(desc, payload)) == payload

    @settings(max_examples=300, deadline=None)
    @given(st.sampled_from(CATALOG), st.data())
    def test_validator_agrees_with_fieldwise_check(self, desc, data):
        # mutate one position to an arbitrary value and compare the fast
        # predicate with a field-by-field evaluation
        payload = list(data.draw(payload_for(desc)))
        if payload:
            i = data.draw(st.integers(0, len(payload) - 1))
            payload[i] = data.draw(st.one_of(
                st.integers(-2**65, 2**65), st.booleans(), st.text(max_size=3),
                st.none(), st.floats(allow_nan=False)))
        payload = tuple(payload)
        expect = len(payload) == len(desc.payload_schema) and all(
            _check_value(ft, v) for (_, ft), v in zip(desc.payload_schema, payload))
        assert conforms(desc.id, payload) == expect
