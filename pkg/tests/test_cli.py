import json
from pathlib import Path

import numpy as np
import pytest

from concentra.cli import main
from concentra.config import config_from_dict, load_config
from concentra.errors import ConfigError
from concentra.geo import parse_regions
from concentra.pipeline import export_choropleth, run_pipeline
from concentra.synth import CityConfig, MeasurementCloudConfig, PlantSpec, write_bundle

CITY = CityConfig(rings=10, regions_per_ring=15, d0=8000, alpha=1.4, r0=6000, seed=21)


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    return write_bundle(
        out,
        CITY,
        {
            "med_hh_income": PlantSpec("positive", 0.1, seed=21),
            "pct_dw_ownership": PlantSpec("negative", 0.1, seed=22),
        },
        MeasurementCloudConfig(provider_pool_rule=((0.0, 1), (1500.0, 3))),
        seed=21,
    )


def write_config(path: Path, bundle, out_dir: Path, extra: str = "") -> Path:
    text = f"""
[paths]
regions = "{bundle['regions']}"
measurements = "{bundle['measurements']}"
socio = "{bundle['socio']}"
out = "{out_dir}"

[run]
seed = 21
determinants = ["med_hh_income"]

[kernel]
bandwidth = 30

[weights]
scheme = "idist"

[classify]
alpha = 0.005

[moran]
permutations = 199
{extra}
"""
    path.write_text(text)
    return path


class TestRunPipeline:
    def test_single_determinant_single_verdict(self, bundle, tmp_path):
        cfg = load_config(write_config(tmp_path / "c.toml", bundle, tmp_path / "run"))
        result = run_pipeline(cfg)
        assert len(result.results) == 1
        assert (tmp_path / "run" / "verdicts.csv").exists()
        fits = list((tmp_path / "run").glob("fit_*.csv"))
        assert len(fits) == 1
        verdict = result.results[0].verdict
        assert verdict.sign == "positive"

    def test_manifest_reexecutes_run(self, bundle, tmp_path):
        cfg = load_config(write_config(tmp_path / "c.toml", bundle, tmp_path / "run1"))
        run_pipeline(cfg)
        manifest = tmp_path / "run1" / "run_manifest.json"
        cfg2 = load_config(manifest, out_dir=tmp_path / "run2")
        run_pipeline(cfg2)
        a = (tmp_path / "run1" / "verdicts.csv").read_bytes()
        b = (tmp_path / "run2" / "verdicts.csv").read_bytes()
        assert a == b

    def test_missing_input_leaves_no_outputs(self, bundle, tmp_path):
        cfg_path = write_config(tmp_path / "c.toml", bundle, tmp_path / "run")
        doc_cfg = load_config(cfg_path)
        broken = config_from_dict(
            {
                "paths": {
                    "regions": str(doc_cfg.regions_path),
                    "measurements": str(tmp_path / "nope.csv"),
                    "socio": str(doc_cfg.socio_path),
                    "out": str(tmp_path / "run"),
                },
                "run": {"seed": 21},
            }
        )
        with pytest.raises(ConfigError):
            run_pipeline(broken)
        assert not (tmp_path / "run").exists()

    def test_nonempty_out_dir_rejected(self, bundle, tmp_path):
        out = tmp_path / "run"
        out.mkdir()
        (out / "sentinel.txt").write_text("keep")
        cfg = load_config(write_config(tmp_path / "c.toml", bundle, out))
        with pytest.raises(ConfigError):
            run_pipeline(cfg)
        assert (out / "sentinel.txt").read_text() == "keep"

    def test_seed_flows_into_artifacts(self, bundle, tmp_path):
        cfg = load_config(write_config(tmp_path / "c.toml", bundle, tmp_path / "run"))
        run_pipeline(cfg)
        manifest = json.loads((tmp_path / "run" / "run_manifest.json").read_text())
        assert manifest["seed"] == 21
        assert manifest["config_hash"] == cfg.config_hash()


class TestCliCommands:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_run_and_report(self, bundle, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.toml", bundle, tmp_path / "never-used")
        code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")])
        out = capsys.readouterr().out
        assert code == 0
        assert "med_hh_income" in out
        code = main(["report", "--run", str(tmp_path / "run")])
        out = capsys.readouterr().out
        assert code == 0
        assert "Concentric-pattern verdicts" in out
        assert "access_network_cost_per_user" in out  # no-data reference row

    def test_run_missing_measurements_exit_3(self, bundle, tmp_path, capsys):
        cfg_text = f"""
[paths]
regions = "{bundle['regions']}"
measurements = "{tmp_path / 'gone.csv'}"
socio = "{bundle['socio']}"
out = "{tmp_path / 'run'}"
[run]
seed = 1
"""
        cfg = tmp_path / "bad.toml"
        cfg.write_text(cfg_text)
        # missing files are config errors at run start
        assert main(["run", "--config", str(cfg)]) == 2
        assert not (tmp_path / "run").exists()

    def test_bad_config_exit_2(self, tmp_path):
        cfg = tmp_path / "broken.toml"
        cfg.write_text("[paths]\nregions = 'x'\n")  # missing keys and seed
        assert main(["run", "--config", str(cfg)]) == 2

    def test_bad_determinant_exit_2(self, bundle, tmp_path):
        cfg = write_config(tmp_path / "c.toml", bundle, tmp_path / "run")
        assert main(["run", "--config", str(cfg), "--determinant", "nope"]) == 2

    def test_synth_subcommand(self, tmp_path, capsys):
        code = main(
            [
                "synth",
                "--out",
                str(tmp_path / "b"),
                "--seed",
                "9",
                "--rings",
                "4",
                "--regions-per-ring",
                "8",
                "--pattern",
                "med_hh_income=concave",
            ]
        )
        assert code == 0
        assert (tmp_path / "b" / "regions.geojson").exists()
        truth = json.loads((tmp_path / "b" / "truth.json").read_text())
        assert truth["planted"]["med_hh_income"]["pattern"] == "concave"

    def test_ingest_fit_moran_classify_flow(self, bundle, tmp_path, capsys):
        proxy = tmp_path / "proxy.csv"
        assert (
            main(
                [
                    "ingest",
                    "--regions", str(bundle["regions"]),
                    "--measurements", str(bundle["measurements"]),
                    "--socio", str(bundle["socio"]),
                    "--seed", "21",
                    "--out", str(proxy),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "fit",
                    "--regions", str(bundle["regions"]),
                    "--proxy-table", str(proxy),
                    "--determinant", "med_hh_income",
                    "--bandwidth", "30",
                    "--out", str(tmp_path / "fit"),
                ]
            )
            == 0
        )
        fit_csv = tmp_path / "fit" / "fit_med_hh_income.csv"
        assert fit_csv.exists()
        assert (
            main(
                [
                    "moran",
                    "--regions", str(bundle["regions"]),
                    "--fit", str(fit_csv),
                    "--weights-scheme", "idist",
                    "--permutations", "99",
                    "--seed", "21",
                    "--out", str(tmp_path / "moran.json"),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "classify",
                    "--fit", str(fit_csv),
                    "--diagnostics", str(tmp_path / "fit" / "diagnostics_med_hh_income.json"),
                    "--moran", str(tmp_path / "moran.json"),
                    "--proxy-table", str(proxy),
                    "--alpha", "0.005",
                ]
            )
            == 0
        )
        verdict = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert verdict["sign"] == "positive"

    def test_export_subcommand(self, bundle, tmp_path, capsys):
        proxy = tmp_path / "proxy.csv"
        main(
            [
                "ingest",
                "--regions", str(bundle["regions"]),
                "--measurements", str(bundle["measurements"]),
                "--socio", str(bundle["socio"]),
                "--seed", "21",
                "--out", str(proxy),
            ]
        )
        out = tmp_path / "choro.geojson"
        code = main(
            [
                "export",
                "--regions", str(bundle["regions"]),
                "--values-csv", str(proxy),
                "--values-column", "pop_dens",
                "--id-column", "region_id",
                "--classes", "7",
                "--out", str(out),
            ]
        )
        assert code == 0
        doc = json.loads(out.read_text())
        assert sum(doc["class_counts"]) == CITY.n_regions()
        assert len(doc["breaks"]) == 8


class TestExportChoropleth:
    def test_counts_sum_to_valued_regions(self, bundle):
        regions = parse_regions(bundle["regions"].read_bytes())
        values = {r.id: r.pop_density for r in regions}
        blob, layer = export_choropleth(regions, values, 7)
        assert sum(layer.counts) == len(regions)
        assert len(layer.breaks) == 8
        assert all("(" in label for label in layer.legend)

    def test_valueless_regions_null_class(self, bundle):
        regions = parse_regions(bundle["regions"].read_bytes())
        values = {r.id: r.pop_density for r in regions[: len(regions) // 2]}
        blob, layer = export_choropleth(regions, values, 5)
        doc = json.loads(blob)
        classes = [f["properties"]["class_index"] for f in doc["features"]]
        assert classes.count(None) == len(regions) - len(values)
        assert sum(layer.counts) == len(values)

    def test_roundtrip_geometry(self, bundle):
        regions = parse_regions(bundle["regions"].read_bytes())
        blob, _ = export_choropleth(regions, {r.id: r.pop_density for r in regions}, 4)
        back = parse_regions(blob)
        assert [r.rings for r in back] == [r.rings for r in regions]

    def test_constant_values_single_class(self, bundle):
        regions = parse_regions(bundle["regions"].read_bytes())
        blob, layer = export_choropleth(regions, {r.id: 5.0 for r in regions}, 7)
        assert len(layer.counts) == 1
        assert "constant" in layer.legend[0]

    def test_concave_coefficient_surface_rings(self, tmp_path):
        # planted hump: slopes positive outside, negative at the dense core;
        # the class-by-radius histogram must place low classes at the core
        from concentra.gwr import KernelConfig, Observation, gwr_fit
        from concentra.synth import generate_city, plant_determinant

        city = CityConfig(rings=12, regions_per_ring=14, d0=15000, alpha=1.6, r0=5000, seed=3)
        regions = generate_city(city)
        vals = plant_determinant(regions, PlantSpec("concave", 0.05, seed=3))
        obs = [
            Observation(r.id, r.centroid, r.pop_density, vals[r.id]) for r in regions
        ]
        fit = gwr_fit(obs, KernelConfig(25))
        surface = {
            rid: c for rid, c in zip(fit.region_ids, fit.c1) if np.isfinite(c)
        }
        blob, layer = export_choropleth(regions, surface, 5)
        center = regions[0].centroid
        radii = {r.id: np.hypot(r.centroid.x - center.x, r.centroid.y - center.y) for r in regions}
        classed = [(radii[rid], layer.class_index[rid]) for rid in surface]
        classed.sort()
        inner = [c for _, c in classed[: len(classed) // 5]]
        outer = [c for _, c in classed[-len(classed) // 2 :]]
        assert np.mean(inner) < np.mean(outer)
