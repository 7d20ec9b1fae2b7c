import random
from dataclasses import replace

import numpy as np
import pytest

from volustream.depth_codec import (
    DELTA,
    KEYFRAME,
    CodecState,
    DepthCodecConfig,
    decode,
    encode,
    encoded_size,
)
from volustream.errors import CodecError, ConfigurationError, DesyncError, FormatError
from volustream.frames import synthetic_source, take
from volustream.wire.messages import serialize_message

from conftest import make_depth_frame, oracle_changed_tiles, random_depth


def run_pair(frames, config):
    """Encode/decode a frame list through fresh states; returns messages+decodes."""
    enc, dec = CodecState(), CodecState()
    messages, decoded = [], []
    for frame in frames:
        msg = encode(enc, frame, config)
        messages.append(msg)
        decoded.append(decode(dec, msg))
    return enc, dec, messages, decoded


class TestEncode:
    def test_first_frame_is_full_keyframe(self):
        config = DepthCodecConfig()
        frame = make_depth_frame(np.full((8, 8), 1000, dtype=np.uint16))
        msg = encode(CodecState(), frame, config)
        assert msg.kind == KEYFRAME
        assert np.array_equal(msg.depth, frame.depth)
        assert msg.intrinsics == frame.intrinsics

    def test_static_frame_gives_zero_tile_delta(self):
        config = DepthCodecConfig()
        frame = make_depth_frame(np.full((8, 8), 1000, dtype=np.uint16))
        state = CodecState()
        encode(state, frame, config)
        msg = encode(state, replace(frame, frame_id=1), config)
        assert msg.kind == DELTA and msg.tiles == []

    def test_single_changed_pixel_tile_and_payload(self):
        # Reference all 1000, pixel (x=17, y=5) -> 1020, threshold 10,
        # tile 16: exactly tile index 1 (row 0, column 1), payload all 1000
        # except local (1, 5).
        config = DepthCodecConfig(tile_size=16, change_threshold_mm=10)
        w, h = 64, 48
        ref = np.full((h, w), 1000, dtype=np.uint16)
        new = ref.copy()
        new[5, 17] = 1020
        state = CodecState()
        encode(state, make_depth_frame(ref), config)
        msg = encode(state, make_depth_frame(new, frame_id=1), config)
        assert msg.kind == DELTA
        assert [t.tile_index for t in msg.tiles] == [1]
        tile = msg.tiles[0]
        assert tile.values.shape == (16, 16)
        expected = np.full((16, 16), 1000, dtype=np.uint16)
        expected[5, 1] = 1020
        assert np.array_equal(tile.values, expected)
        # Cross-check with the brute-force oracle.
        assert oracle_changed_tiles(ref, new, 10, 16) == [1]

    def test_change_at_threshold_not_sent(self):
        config = DepthCodecConfig(tile_size=8, change_threshold_mm=10)
        ref = np.full((8, 8), 1000, dtype=np.uint16)
        state = CodecState()
        encode(state, make_depth_frame(ref), config)
        at_threshold = ref.copy()
        at_threshold[0, 0] = 1010  # |diff| == threshold: not beyond it
        msg = encode(state, make_depth_frame(at_threshold, frame_id=1), config)
        assert msg.tiles == []

    def test_validity_flip_always_sent(self):
        config = DepthCodecConfig(tile_size=8, change_threshold_mm=500)
        ref = np.full((8, 8), 1000, dtype=np.uint16)
        state = CodecState()
        encode(state, make_depth_frame(ref), config)
        flipped = ref.copy()
        flipped[3, 3] = 0
        msg = encode(state, make_depth_frame(flipped, frame_id=1), config)
        assert [t.tile_index for t in msg.tiles] == [0]

    def test_keyframe_interval_forces_keyframe(self):
        config = DepthCodecConfig(keyframe_interval=3)
        state = CodecState()
        frame = make_depth_frame(np.full((8, 8), 900, dtype=np.uint16))
        kinds = [
            encode(state, replace(frame, frame_id=i), config).kind for i in range(7)
        ]
        assert kinds == [KEYFRAME, DELTA, DELTA, KEYFRAME, DELTA, DELTA, KEYFRAME]

    def test_dimension_mismatch_raises(self):
        config = DepthCodecConfig()
        state = CodecState()
        encode(state, make_depth_frame(np.full((8, 8), 900, dtype=np.uint16)), config)
        with pytest.raises(CodecError):
            encode(state, make_depth_frame(np.full((8, 16), 900, dtype=np.uint16)), config)

    def test_delta_references_epoch_keyframe(self, moving_scene):
        config = DepthCodecConfig(keyframe_interval=4)
        frames = [d for d, _ in take(synthetic_source(moving_scene), 6)]
        _, _, messages, _ = run_pair(frames, config)
        assert messages[0].kind == KEYFRAME
        for msg in messages[1:4]:
            assert msg.ref_frame_id == messages[0].frame_id
        assert messages[4].kind == KEYFRAME
        assert messages[5].ref_frame_id == messages[4].frame_id


class TestDecode:
    def test_bounded_error_round_trip(self, moving_scene):
        config = DepthCodecConfig(change_threshold_mm=10)
        frames = [d for d, _ in take(synthetic_source(moving_scene), 8)]
        _, _, messages, decoded = run_pair(frames, config)
        for original, result, msg in zip(frames, decoded, messages):
            diff = np.abs(result.depth.astype(np.int32) - original.depth.astype(np.int32))
            both_valid = (result.depth > 0) & (original.depth > 0)
            assert diff[both_valid].max(initial=0) <= config.change_threshold_mm
            # Validity never silently flips.
            assert ((result.depth > 0) == (original.depth > 0)).all()

    def test_exact_inside_sent_tiles(self):
        config = DepthCodecConfig(tile_size=8, change_threshold_mm=20)
        rng = random.Random(2)
        ref = random_depth(rng, 24, 16)
        new = random_depth(rng, 24, 16)
        enc, dec = CodecState(), CodecState()
        decode(dec, encode(enc, make_depth_frame(ref), config))
        msg = encode(enc, make_depth_frame(new, frame_id=1), config)
        result = decode(dec, msg)
        for tile in msg.tiles:
            tiles_x = 3  # ceil(24/8)
            ty, tx = divmod(tile.tile_index, tiles_x)
            y0, x0 = ty * 8, tx * 8
            assert np.array_equal(
                result.depth[y0:y0 + 8, x0:x0 + 8], new[y0:y0 + 8, x0:x0 + 8]
            )

    def test_keyframe_of_zeros_reconstructs_invalid(self):
        config = DepthCodecConfig()
        frame = make_depth_frame(np.zeros((8, 8), dtype=np.uint16))
        dec = CodecState()
        result = decode(dec, encode(CodecState(), frame, config))
        assert (result.depth == 0).all()

    def test_zero_tile_delta_reproduces_reference(self):
        config = DepthCodecConfig()
        frame = make_depth_frame(np.full((8, 8), 750, dtype=np.uint16))
        enc, dec = CodecState(), CodecState()
        decode(dec, encode(enc, frame, config))
        result = decode(dec, encode(enc, replace(frame, frame_id=1), config))
        assert np.array_equal(result.depth, frame.depth)

    def test_delta_without_reference_desyncs(self, moving_scene):
        config = DepthCodecConfig()
        frames = [d for d, _ in take(synthetic_source(moving_scene), 2)]
        enc = CodecState()
        encode(enc, frames[0], config)
        delta = encode(enc, frames[1], config)
        with pytest.raises(DesyncError):
            decode(CodecState(), delta)

    def test_delta_from_wrong_epoch_desyncs(self, moving_scene):
        config = DepthCodecConfig(keyframe_interval=2)
        frames = [d for d, _ in take(synthetic_source(moving_scene), 4)]
        enc, dec = CodecState(), CodecState()
        k0 = encode(enc, frames[0], config)
        decode(dec, k0)
        encode(enc, frames[1], config)  # delta, epoch 0 (lost)
        k2 = encode(enc, frames[2], config)  # new keyframe epoch (lost)
        d3 = encode(enc, frames[3], config)  # delta, epoch 2
        assert k2.kind == KEYFRAME and d3.kind == DELTA
        with pytest.raises(DesyncError):
            decode(dec, d3)

    def test_out_of_range_tile_rejected(self):
        from volustream.depth_codec import TilePayload

        config = DepthCodecConfig(tile_size=8)
        frame = make_depth_frame(np.full((8, 8), 750, dtype=np.uint16))
        enc, dec = CodecState(), CodecState()
        decode(dec, encode(enc, frame, config))
        bad = encode(enc, replace(frame, frame_id=1), config)
        # Forge an index beyond the single-tile grid.
        bad.tiles = [TilePayload(5, np.full((8, 8), 1, dtype=np.uint16))]
        with pytest.raises(FormatError):
            decode(dec, bad)


class TestSynchrony:
    def test_encoder_decoder_references_identical(self, moving_scene):
        config = DepthCodecConfig(change_threshold_mm=15, keyframe_interval=5)
        frames = [d for d, _ in take(synthetic_source(moving_scene), 12)]
        enc, dec, _, _ = run_pair(frames, config)
        assert np.array_equal(enc.reference, dec.reference)

    def test_threshold_zero_is_lossless(self, moving_scene):
        scene = replace(moving_scene, noise_amplitude_mm=4)
        config = DepthCodecConfig(change_threshold_mm=0)
        frames = [d for d, _ in take(synthetic_source(scene), 6)]
        _, _, _, decoded = run_pair(frames, config)
        for original, result in zip(frames, decoded):
            assert np.array_equal(original.depth, result.depth)

    def test_raising_threshold_never_adds_tiles(self):
        rng = random.Random(9)
        ref = random_depth(rng, 32, 24)
        new = random_depth(rng, 32, 24)
        previous = None
        for threshold in (0, 5, 15, 40, 100):
            tiles = set(oracle_changed_tiles(ref, new, threshold, 8))
            enc = CodecState()
            enc.reference = ref.copy()
            enc.tile_size = 8
            enc.intrinsics = make_depth_frame(ref).intrinsics
            enc.epoch_frame_id = 0
            msg = encode(
                enc, make_depth_frame(new, frame_id=1),
                DepthCodecConfig(tile_size=8, change_threshold_mm=threshold),
            )
            assert {t.tile_index for t in msg.tiles} == tiles
            if previous is not None:
                assert tiles <= previous
            previous = tiles


class TestEncodedSize:
    def test_zero_tile_delta_is_32_bytes(self):
        config = DepthCodecConfig()
        frame = make_depth_frame(np.full((16, 16), 600, dtype=np.uint16))
        state = CodecState()
        encode(state, frame, config)
        msg = encode(state, replace(frame, frame_id=1), config)
        assert msg.tiles == []
        assert encoded_size(msg) == 32
        assert len(serialize_message(msg)) == 32

    def test_keyframe_size_formula(self, small_scene):
        config = DepthCodecConfig()
        depth = take(synthetic_source(small_scene), 1)[0][0]
        msg = encode(CodecState(), depth, config)
        expected = 12 + 33 + 2 * depth.width * depth.height
        assert encoded_size(msg) == expected
        assert len(serialize_message(msg)) == expected

    def test_one_tile_delta_size(self):
        # 12 (envelope) + 20 (delta prefix) + 6 (tile header) + 512 (16x16 u16)
        config = DepthCodecConfig(tile_size=16, change_threshold_mm=5)
        ref = np.full((32, 32), 1000, dtype=np.uint16)
        state = CodecState()
        encode(state, make_depth_frame(ref), config)
        new = ref.copy()
        new[0, 0] = 2000
        msg = encode(state, make_depth_frame(new, frame_id=1), config)
        assert len(msg.tiles) == 1
        assert encoded_size(msg) == 12 + 20 + 6 + 512
        assert len(serialize_message(msg)) == encoded_size(msg)

    def test_size_matches_serialization_for_clipped_tiles(self):
        config = DepthCodecConfig(tile_size=16, change_threshold_mm=0)
        rng = random.Random(4)
        ref = random_depth(rng, 52, 40)
        new = random_depth(rng, 52, 40)
        state = CodecState()
        encode(state, make_depth_frame(ref), config)
        msg = encode(state, make_depth_frame(new, frame_id=1), config)
        assert encoded_size(msg) == len(serialize_message(msg))


class TestConfigValidation:
    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            DepthCodecConfig(tile_size=0)
        with pytest.raises(ConfigurationError):
            DepthCodecConfig(keyframe_interval=0)
        with pytest.raises(ConfigurationError):
            DepthCodecConfig(change_threshold_mm=-1)
