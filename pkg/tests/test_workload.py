import pytest

from edgevr.config import RunConfig
from edgevr.workload import (
    TraceParseError,
    TraceSet,
    TrackRecord,
    WorkloadParams,
    background_size_bits,
    estimate_flops,
    foreground_size_bits,
    generate_traces,
    load_traces,
    profile_of,
    save_traces,
)

SCREEN_PIXELS = 2064 * 2208   # default panel


def default_params() -> WorkloadParams:
    return WorkloadParams.from_config(RunConfig())


def test_screen_geometry():
    assert SCREEN_PIXELS == 4_557_312
    assert RunConfig().screen_pixels == SCREEN_PIXELS


def test_estimate_flops_frozen():
    assert estimate_flops(100, 10_000, 5, SCREEN_PIXELS) == 23_786_560.0
    assert estimate_flops(600, 40_000, 50, SCREEN_PIXELS // 2) == 137_932_800.0
    assert estimate_flops(0, 0, 0, 0) == 0.0
    with pytest.raises(ValueError):
        estimate_flops(-1, 10, 5, 100)


def test_tile_sizes_frozen():
    assert foreground_size_bits(SCREEN_PIXELS // 2, 40,
                                SCREEN_PIXELS) == 91_146_240.0
    assert foreground_size_bits(0, 40, SCREEN_PIXELS) == 0.0
    assert background_size_bits(40, SCREEN_PIXELS) == 182_292_480.0
    # compressed background payload, the thing actually transmitted
    assert background_size_bits(40, SCREEN_PIXELS) * 0.016 \
        == pytest.approx(2_916_679.68, rel=1e-12)
    with pytest.raises(ValueError):
        foreground_size_bits(SCREEN_PIXELS + 1, 40, SCREEN_PIXELS)


def test_profile_of_uses_full_screen_for_background():
    params = default_params()
    rec = TrackRecord(episode=0, user=0, slot=0, x=1.0, y=2.0,
                      n_vf=10_000, c_vf=100.0, c_pf=5.0, n_pf=0,
                      bg=((15_000, 150.0, 10.0), (10_000, 100.0, 5.0)))
    prof = profile_of(rec, params)
    assert prof.fg_load_cycles == 1_000_000.0
    assert prof.fg_size_bits == 0.0
    assert prof.bg_load_cycles[0] == 150.0 * 15_000 + 10.0 * SCREEN_PIXELS
    assert prof.bg_load_cycles[1] == 23_786_560.0
    assert prof.bg_size_bits == 182_292_480.0


def test_generate_traces_deterministic_and_in_range():
    params = default_params()
    a = generate_traces(params, episodes=2, users=3, horizon=4, seed=11)
    b = generate_traces(params, episodes=2, users=3, horizon=4, seed=11)
    c = generate_traces(params, episodes=2, users=3, horizon=4, seed=12)
    assert a == b
    assert a != c
    assert len(a) == 2 * 3 * 4
    for rec in a:
        assert 0.0 <= rec.x <= params.room_side_m
        assert 0.0 <= rec.y <= params.room_side_m
        assert params.fg_vertex_range[0] <= rec.n_vf \
            <= params.fg_vertex_range[1]
        assert 0 <= rec.n_pf <= params.fg_pixel_fraction_max \
            * params.screen_pixels
        assert len(rec.bg) == params.window
        for n_vb, c_vb, c_pb in rec.bg:
            assert params.bg_vertex_range[0] <= n_vb \
                <= params.bg_vertex_range[1]
            assert params.bg_vertex_cycles_range[0] <= c_vb \
                <= params.bg_vertex_cycles_range[1]
            assert params.bg_pixel_cycles_range[0] <= c_pb \
                <= params.bg_pixel_cycles_range[1]


def test_static_mobility_keeps_position():
    params = default_params()
    records = generate_traces(params, episodes=1, users=1, horizon=10,
                              seed=3)
    assert len({(r.x, r.y) for r in records}) == 1


def test_trace_roundtrip_is_lossless(tmp_path):
    params = default_params()
    records = generate_traces(params, episodes=2, users=2, horizon=3, seed=5)
    path = tmp_path / "traces.txt"
    save_traces(path, records)
    loaded = load_traces(path, params)
    assert loaded.warnings == []
    assert loaded.window == params.window
    assert loaded.users == 2 and loaded.horizon == 3
    assert loaded.episodes == [0, 1]
    for rec in records:
        got = loaded.record(rec.episode, rec.user, rec.slot)
        assert got == rec   # floats round-trip exactly through repr


def test_trace_set_rejects_holes_and_duplicates():
    rec = TrackRecord(episode=0, user=0, slot=0, x=0.0, y=0.0, n_vf=1000,
                      c_vf=100.0, c_pf=5.0, n_pf=0, bg=((10_000, 100.0, 5.0),))
    with pytest.raises(TraceParseError, match="duplicate"):
        TraceSet([rec, rec])
    other = TrackRecord(episode=0, user=1, slot=1, x=0.0, y=0.0, n_vf=1000,
                        c_vf=100.0, c_pf=5.0, n_pf=0,
                        bg=((10_000, 100.0, 5.0),))
    with pytest.raises(TraceParseError, match="missing"):
        TraceSet([rec, other])


def test_load_traces_reports_bad_fields(tmp_path):
    params = default_params()
    records = generate_traces(params, episodes=1, users=1, horizon=2, seed=1)
    path = tmp_path / "traces.txt"
    save_traces(path, records)
    text = path.read_text().splitlines()
    text[1] = text[1].replace(text[1].split(" ")[5], "not_a_number", 1)
    bad = tmp_path / "bad.txt"
    bad.write_text("\n".join(text) + "\n")
    with pytest.raises(TraceParseError):
        load_traces(bad, params)


def test_load_traces_warns_out_of_range(tmp_path):
    params = default_params()
    records = generate_traces(params, episodes=1, users=1, horizon=2, seed=1)
    # smuggle in an out-of-room position
    doctored = [records[0]] + [
        TrackRecord(episode=r.episode, user=r.user, slot=r.slot,
                    x=999.0, y=r.y, n_vf=r.n_vf, c_vf=r.c_vf, c_pf=r.c_pf,
                    n_pf=r.n_pf, bg=r.bg)
        for r in records[1:]
    ]
    path = tmp_path / "traces.txt"
    save_traces(path, doctored)
    loaded = load_traces(path, params)
    assert loaded.warnings
    assert any("position" in w and "outside the room" in w
               for w in loaded.warnings)
