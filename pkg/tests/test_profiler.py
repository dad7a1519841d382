import numpy as np
import pytest

from fade.errors import UnknownKind
from fade.oracles import MacCounter, conv2d_loops
from fade.profiler import CSV_HEADER, KINDS, OpDesc, bench_run, count_flops, make_grid, rows_to_csv
from fade.tensor_core import Padding


def test_bilinear_closed_form():
    for C, H, W in [(1, 2, 3), (64, 56, 56), (5, 7, 11)]:
        rep = count_flops(OpDesc("bilinear", C, H, W))
        assert rep.macs == 0
        assert rep.flops == 7 * C * 2 * H * 2 * W


def test_frozen_counts_at_c64_h56():
    # Hand-derived: compress 112*112*128*64, content 112*112*64*25*9, reassembly 112*112*64*25.
    naive = count_flops(OpDesc("fade_naive", 64, 56, 56))
    assert naive.breakdown == {"compress": 102_760_448, "content": 180_633_600, "reassemble": 20_070_400}
    assert naive.macs == 303_464_448
    carafe = count_flops(OpDesc("carafe", 64, 56, 56))
    assert carafe.macs == 56 * 56 * 64 * 64 + 56 * 56 * 64 * 100 * 9 + 112 * 112 * 64 * 25


def test_unmerged_encoder_compressor():
    rep = count_flops(OpDesc("fade_semishift", 64, 56, 56, schedule="unmerged"))
    assert rep.breakdown["enc_compress"] == 51_380_224


def test_naive_mac_counts_match_loop_counter():
    C, H, d, K, h = 2, 2, 3, 3, 3
    rep = count_flops(OpDesc("fade_naive", C, H, H, K=K, h=h, d=d))
    c1, c2 = MacCounter(), MacCounter()
    x = np.zeros((1, 2 * C, 2 * H, 2 * H))
    z = conv2d_loops(x, np.zeros((d, 2 * C, 1, 1)), counter=c1)
    conv2d_loops(z, np.zeros((K * K, d, h, h)), padding=Padding.uniform(1), counter=c2)
    assert rep.breakdown["compress"] == c1.count
    assert rep.breakdown["content"] == c2.count


def test_naive_holds_concatenated_buffer():
    naive = count_flops(OpDesc("fade_naive", 64, 56, 56))
    semi = count_flops(OpDesc("fade_semishift", 64, 56, 56))
    assert naive.buffers["concat"] == 2 * 64 * 112 * 112 * 4
    assert "concat" not in semi.buffers and "dec_interp" not in semi.buffers
    assert semi.peak_bytes < naive.peak_bytes


@pytest.mark.parametrize("grid", ["fig9a", "fig9b", "fig9c"])
def test_semishift_cheaper_everywhere(grid):
    rows = bench_run(make_grid(grid, ["fade_naive", "fade_semishift"]), timed=False)
    half = len(rows) // 2
    for naive, semi in zip(rows[:half], rows[half:]):
        assert (naive["C"], naive["H"]) == (semi["C"], semi["H"])
        assert semi["flops"] < naive["flops"]
        assert semi["peak_bytes"] < naive["peak_bytes"]


def test_grid_sizes_and_monotone_channels():
    assert len(make_grid("fig9a")) == 5 * len(KINDS)
    assert len(make_grid("fig9b")) == len(make_grid("fig9c")) == 4 * len(KINDS)
    rows = bench_run(make_grid("fig9a"), timed=False)
    for kind in KINDS:
        flops = [r["flops"] for r in rows if r["kind"] == kind]
        assert flops == sorted(flops)


def test_single_row_csv():
    rows = bench_run([OpDesc("bilinear", 4, 8, 8)], trials=3)
    text = rows_to_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 2 and lines[1].split(",")[7] == "0"
    assert int(rows[0]["wall_ns_median"]) > 0


def test_untimed_csv_reproducible():
    a = rows_to_csv(bench_run(make_grid("fig9b"), timed=False))
    assert a == rows_to_csv(bench_run(make_grid("fig9b"), timed=False))


def test_errors():
    with pytest.raises(UnknownKind):
        OpDesc("nearest", 4, 8, 8)
    with pytest.raises(ValueError):
        bench_run([OpDesc("bilinear", 4, 8, 8)], trials=1)
    with pytest.raises(ValueError):
        make_grid("fig10")
