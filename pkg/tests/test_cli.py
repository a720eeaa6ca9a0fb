"""CLI tests on a miniature experiment configuration."""

import json
from pathlib import Path

import numpy as np
import pytest

from holoseis import cli, io as hio


@pytest.fixture()
def tiny_config(tmp_path):
    cfg = {
        "geometry": {
            "half_width": 0.5,
            "receiver_radius": 1.0,
            "n_receivers": 12,
            "points_per_wavelength": 7.5,
        },
        "medium": {
            "reference": {"c": 1.0, "rho": 1.0, "gamma": 0.25},
            "source": {"model": "zero"},
            "perturbations": [
                {
                    "field": "S",
                    "shape": "block",
                    "center": [0.15, -0.1],
                    "half_width": 0.12,
                    "amplitude": 1.0,
                }
            ],
        },
        "frequencies": {"count": 2, "f_min_hz": 1.9, "f_max_hz": 2.0, "power": 1.0},
        "realizations": 64,
        "seed": 99,
        "inversion": {
            "quantities": ["S"],
            "tau": 0.0,
            "max_outer": 2,
            "max_cg": 30,
            "beta_scale_note": "uses default",
        },
        "kernels": {
            "pairs": [["S", "S"]],
            "targets": [[0.15, -0.1]],
            "band_count": 2,
        },
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, cfg, tmp_path


class TestSynth:
    def test_writes_archives_and_manifest(self, tiny_config):
        path, cfg, tmp = tiny_config
        out = tmp / "run"
        rc = cli.main(["synth", "--config", str(path), "--out", str(out)])
        assert rc == 0
        archives = sorted(out.glob("realizations_f*.hsr"))
        assert len(archives) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["config_hash"] == hio.config_hash(cfg)

    def test_byte_identical_reruns(self, tiny_config):
        path, cfg, tmp = tiny_config
        out1, out2 = tmp / "a", tmp / "b"
        assert cli.main(["synth", "--config", str(path), "--out", str(out1)]) == 0
        assert cli.main(["synth", "--config", str(path), "--out", str(out2)]) == 0
        for f1 in sorted(out1.glob("*.hsr")):
            f2 = out2 / f1.name
            assert f1.read_bytes() == f2.read_bytes()

    def test_seed_override_changes_bytes(self, tiny_config):
        path, cfg, tmp = tiny_config
        out1, out2 = tmp / "a", tmp / "b"
        cli.main(["synth", "--config", str(path), "--out", str(out1)])
        cli.main(
            ["synth", "--config", str(path), "--out", str(out2), "--seed", "100"]
        )
        f1 = sorted(out1.glob("*.hsr"))[0]
        f2 = out2 / f1.name
        assert f1.read_bytes() != f2.read_bytes()

    def test_zero_source_gives_zero_archives(self, tiny_config, tmp_path):
        path, cfg, tmp = tiny_config
        cfg2 = json.loads(Path(path).read_text())
        cfg2["medium"]["perturbations"] = []
        p2 = tmp_path / "zero.json"
        p2.write_text(json.dumps(cfg2))
        out = tmp_path / "zero_run"
        assert cli.main(["synth", "--config", str(p2), "--out", str(out)]) == 0
        arc = hio.read_realizations(sorted(out.glob("*.hsr"))[0])
        assert not np.any(arc.fields)


class TestHologram:
    def test_roundtrip_outputs(self, tiny_config):
        path, cfg, tmp = tiny_config
        out = tmp / "run"
        cli.main(["synth", "--config", str(path), "--out", str(out)])
        rc = cli.main(["hologram", "--config", str(path), "--out", str(out)])
        assert rc == 0
        band = hio.read_matrix(out / "hologram_band.hsm")
        per_freq = [
            hio.read_matrix(p) for p in sorted(out.glob("hologram_f*.hsm"))
        ]
        assert np.allclose(band, np.mean(per_freq, axis=0), atol=1e-15)
        meta = json.loads((out / "hologram_meta.json").read_text())
        assert meta["quantity"] == "S"
        assert (out / "hologram_cut_x.csv").exists()
        assert (out / "hologram_cut_y.csv").exists()


class TestKernels:
    def test_band_average_and_cuts(self, tiny_config):
        path, cfg, tmp = tiny_config
        out = tmp / "kern"
        rc = cli.main(["kernels", "--config", str(path), "--out", str(out)])
        assert rc == 0
        kern = hio.read_matrix(out / "kernel_S_S.hsm")
        assert kern.shape[0] == 1  # one target row
        meta = json.loads((out / "kernels_meta.json").read_text())
        assert meta["band_count"] == 2
        assert (out / "kernel_S_S_t0_x.csv").exists()

    def test_single_frequency_band_of_width_one(self, tiny_config, tmp_path):
        path, cfg, tmp = tiny_config
        cfg2 = json.loads(Path(path).read_text())
        cfg2["frequencies"] = {"count": 1, "f_min_hz": 2.0, "f_max_hz": 2.0}
        cfg2["kernels"]["band_count"] = 1
        p2 = tmp_path / "single.json"
        p2.write_text(json.dumps(cfg2))
        out = tmp_path / "kern1"
        assert cli.main(["kernels", "--config", str(p2), "--out", str(out)]) == 0
        assert (out / "kernel_S_S.hsm").exists()


class TestInvert:
    def test_reconstruction_and_diagnostics(self, tiny_config):
        path, cfg, tmp = tiny_config
        out = tmp / "run"
        cli.main(["synth", "--config", str(path), "--out", str(out)])
        rc = cli.main(["invert", "--config", str(path), "--out", str(out)])
        assert rc == 0
        recon = hio.read_matrix(out / "reconstruction_S.hsm")
        assert recon.ndim == 1 and np.all(np.isfinite(recon.real))
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations"] == 2
        lines = (out / "diagnostics.csv").read_text().strip().splitlines()
        assert lines[0].startswith("iteration,alpha,misfit")
        assert len(lines) == 3


class TestExitCodes:
    def test_config_error_is_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 2

    def test_schema_violation_is_2(self, tmp_path):
        cfg = dict(cli.EXAMPLE_CONFIG)
        cfg = json.loads(json.dumps(cfg))
        cfg["geometry"]["n_receivers"] = 1
        p = tmp_path / "schema.json"
        p.write_text(json.dumps(cfg))
        assert cli.main(["synth", "--config", str(p), "--out", str(tmp_path)]) == 2

    def test_numerical_failure_is_3(self, tiny_config, tmp_path, monkeypatch):
        path, cfg, tmp = tiny_config
        out = tmp / "run"
        cli.main(["synth", "--config", str(path), "--out", str(out)])

        from holoseis import inversion as inv
        from holoseis.errors import NumericalBreakdownError

        def boom(*a, **k):
            raise NumericalBreakdownError("synthetic failure")

        monkeypatch.setattr(inv, "run_irgnm", boom)
        monkeypatch.setattr("holoseis.cli.inversion.run_irgnm", boom)
        rc = cli.main(["invert", "--config", str(path), "--out", str(out)])
        assert rc == 3


class TestShippedConfigs:
    """The example configurations in configs/ run through every subcommand."""

    def test_source_inversion_config_full_pipeline(self, tmp_path):
        cfg_path = Path(__file__).resolve().parents[1] / "configs" / "source_inversion.json"
        out = tmp_path / "run"
        assert cli.main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert cli.main(["hologram", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert cli.main(["invert", "--config", str(cfg_path), "--out", str(out)]) == 0
        kern_out = tmp_path / "kernels"
        assert cli.main(["kernels", "--config", str(cfg_path), "--out", str(kern_out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["final_misfit"] > 0
        # shipped-config invariant: weighted misfit non-increasing
        import csv as _csv

        rows = list(_csv.DictReader(open(out / "diagnostics.csv")))
        mis = [float(r["misfit"]) for r in rows]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(mis, mis[1:]))

    def test_lindsey_braun_config_localizes(self, tmp_path):
        cfg_path = Path(__file__).resolve().parents[1] / "configs" / "lindsey_braun.json"
        cfg = json.loads(cfg_path.read_text())
        out = tmp_path / "lb"
        assert cli.main(["synth", "--config", str(cfg_path), "--out", str(out)]) == 0
        assert cli.main(["hologram", "--config", str(cfg_path), "--out", str(out)]) == 0
        meta = json.loads((out / "hologram_meta.json").read_text())
        peak = np.asarray(meta["peak_position"])
        center = np.asarray(cfg["medium"]["perturbations"][0]["center"])
        lam = cfg["medium"]["reference"]["c"] / cfg["frequencies"]["f_max_hz"]
        hw = cfg["medium"]["perturbations"][0]["half_width"]
        assert np.max(np.abs(peak - center)) <= hw + lam / 2

    def test_kernel_band_config_validates(self):
        cfg_path = (
            Path(__file__).resolve().parents[1] / "configs" / "kernel_band_average.json"
        )
        cfg = json.loads(cfg_path.read_text())
        cli.validate_config(cfg)
        grid = cli.build_grid(cfg)
        assert grid.n_receivers == 40


class TestBoundarySource:
    def test_boundary_source_config_plumbs_through(self, tiny_config, tmp_path):
        path, cfg, tmp = tiny_config
        cfg2 = json.loads(Path(path).read_text())
        cfg2["medium"]["boundary_source"] = {"value": 0.05}
        p2 = tmp_path / "bnd.json"
        p2.write_text(json.dumps(cfg2))
        out = tmp_path / "bnd_run"
        assert cli.main(["synth", "--config", str(p2), "--out", str(out)]) == 0
        assert cli.main(["invert", "--config", str(p2), "--out", str(out)]) == 0
