import json

import numpy as np
import pytest

from escher_tile import cli
from escher_tile.fit import TargetShape
from escher_tile.tilesolve import TileParams, solve_tile
from escher_tile.wallpaper import GROUP_IDS, build_tile


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write_target(path, points=64):
    shape = TargetShape.ellipse(points=points)
    path.write_text("\n".join(f"{x:.17g} {y:.17g}" for x, y in shape.polygon))
    return path


def test_groups_listing(capsys):
    code, out, _ = run(capsys, "groups")
    assert code == 0
    rows = out.splitlines()[1:]
    assert len(rows) == 17 == len(GROUP_IDS)
    assert sum(r.rstrip().endswith("yes") for r in rows) == 13
    code, again, _ = run(capsys, "groups")
    assert again == out
    code, out, _ = run(capsys, "groups", "--interesting")
    assert len(out.splitlines()) == 14


def test_unknown_group_and_bad_flags_are_usage_errors(capsys):
    assert run(capsys, "solve", "--group", "bogus")[0] == cli.EXIT_USAGE
    assert run(capsys, "solve", "--n", "-3")[0] == cli.EXIT_USAGE
    assert run(capsys, "frobnicate")[0] == cli.EXIT_USAGE


def test_solve_and_validate(tmp_path, capsys):
    out = tmp_path / "t.json"
    code, text, _ = run(capsys, "solve", "--group", "442", "--n", "8", "--seed", "4", "--phi", "0.3",
                        "--coverage", "--out", out)
    assert code == 0 and out.exists()
    assert run(capsys, "validate", out)[0] == 0

    data = json.loads(out.read_text())
    data["positions"][len(data["positions"]) // 2][0] += 0.05
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    code, text, _ = run(capsys, "validate", bad)
    assert code == cli.EXIT_FAIL


def test_zero_theta_file_gives_canonical_tile(tmp_path, capsys):
    mesh, cs = build_tile("O", 8)
    theta = tmp_path / "theta.json"
    theta.write_text(json.dumps([0.0] * len(mesh.directed_edges)))
    out = tmp_path / "t.json"
    assert run(capsys, "solve", "--group", "O", "--n", "8", "--theta", theta, "--out", out)[0] == 0
    tf = cli.TileFile.read(out)
    np.testing.assert_allclose(tf.positions, mesh.uvs, atol=1e-12)


def test_theta_length_mismatch(tmp_path, capsys):
    theta = tmp_path / "theta.txt"
    theta.write_text("0.1\n0.2\n")
    assert run(capsys, "solve", "--group", "O", "--n", "8", "--theta", theta)[0] == cli.EXIT_DATAERR


def test_tile_file_roundtrip(tmp_path):
    mesh, cs = build_tile("3*3", 9)
    tile = solve_tile(mesh, cs, TileParams.random(mesh, np.random.default_rng(2), random_phi=True))
    path = cli.TileFile.from_tile(tile, 9).save(tmp_path / "t.json")
    tf, again, _, _ = cli.TileFile.load(path)
    assert np.max(np.abs(again.positions - tile.positions)) <= 1e-8
    assert tf.phi == tile.params.phi and np.array_equal(tf.theta, tile.params.theta)


def test_tile_file_errors(tmp_path):
    with pytest.raises(cli.CliError) as exc:
        cli.TileFile.read(tmp_path / "missing.json")
    assert exc.value.code == cli.EXIT_NOINPUT
    junk = tmp_path / "junk.json"
    junk.write_text("{not json")
    with pytest.raises(cli.CliError) as exc:
        cli.TileFile.read(junk)
    assert exc.value.code == cli.EXIT_DATAERR


def test_render(tmp_path, capsys):
    tile = tmp_path / "t.json"
    assert run(capsys, "solve", "--group", "632", "--n", "6", "--seed", "1", "--out", tile)[0] == 0
    prefix = tmp_path / "r" / "tiling"
    code, _, _ = run(capsys, "render", tile, "--scheme", "uniform", "--resolution", "128", "--out", prefix)
    assert code == 0
    svg = prefix.with_suffix(".svg").read_text()
    assert len({p.split('"')[1] for p in svg.split("fill=")[1:]}) == 1
    assert prefix.with_suffix(".png").exists()

    assert run(capsys, "render", tmp_path / "none.json")[0] == cli.EXIT_NOINPUT
    data = json.loads(tile.read_text())
    data["positions"][0][0] += 1.0
    tile.write_text(json.dumps(data))
    assert run(capsys, "render", tile)[0] == cli.EXIT_DATAERR


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck", "--group", "O", "--n", "4")
    assert code == 0 and "max relative error" in out


def test_config_merge_and_errors(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('group = "442"\nn = 12\niterations = 5\n')
    merged = cli.RunConfig.merge(cli.RunConfig.load(cfg), {"n": 16, "lr_theta": None})
    assert (merged.group, merged.n, merged.iterations, merged.lr_theta) == ("442", 16, 5, 0.1)

    cfg.write_text('group = "442"\ncolour = "red"\n')
    with pytest.raises(cli.CliError) as exc:
        cli.RunConfig.load(cfg)
    assert exc.value.code == cli.EXIT_DATAERR
    cfg.write_text('n = "many"\n')
    with pytest.raises(cli.CliError) as exc:
        cli.RunConfig.merge(cli.RunConfig.load(cfg), {})
    assert exc.value.code == cli.EXIT_DATAERR
    with pytest.raises(cli.CliError) as exc:
        cli.RunConfig.load(tmp_path / "nope.toml")
    assert exc.value.code == cli.EXIT_NOINPUT


def test_fit_writes_artifacts(tmp_path, capsys):
    target = write_target(tmp_path / "ellipse.txt")
    out = tmp_path / "run"
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'group = "O"\nn = 8\ntarget = "{target}"\noutput = "{out}"\n'
                   f'samples = 64\nresolution = 64\n')
    code, text, _ = run(capsys, "fit", cfg, "--iterations", "0")
    assert code == 0
    for name in ("tile.json", "loss.csv", "texture.png", "tiling.png", "tiling.svg"):
        assert (out / name).exists()
    assert (out / "loss.csv").read_text().splitlines()[0] == "iteration,loss"
    code, text, _ = run(capsys, "fit", cfg, "--iterations", "3")
    assert code == 0 and len((out / "loss.csv").read_text().splitlines()) == 4


def test_fit_missing_inputs(tmp_path, capsys):
    assert run(capsys, "fit", "--target", tmp_path / "none.txt", "--n", "8",
               "--output", tmp_path / "o")[0] == cli.EXIT_NOINPUT
    assert run(capsys, "fit", "--n", "8")[0] == cli.EXIT_USAGE
    assert run(capsys, "fit", tmp_path / "none.toml")[0] == cli.EXIT_NOINPUT


def test_thread_cap_validation(monkeypatch, capsys):
    monkeypatch.setenv("ESCHER_TILE_THREADS", "zero")
    assert run(capsys, "groups")[0] == cli.EXIT_USAGE
