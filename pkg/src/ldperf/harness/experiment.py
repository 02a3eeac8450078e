"""End-to-end experiment runner writing a reproducible output bundle."""

from __future__ import annotations

import logging
import math
import platform
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..asymptotics import ThresholdRule, error_curve, estimate_moments
from ..d3f import TrainConfig, save_weights, train_cnn
from ..d3f.cnn import cnn_score
from ..d3f.mixture import rn_condition_check
from ..lmgf import DEFAULT_GRID, LmgfWarning, lmgf_direct, scaled_lmgf_direct
from ..models import (CompositeModel, ImageModel, ShiftModel, kl_divergence, sample_iid,
                      write_pbm)
from ..ratefn import rate_curve
from ..tilting import TiltConfig, iid_target, mixture_target, rate_from_tilting
from . import scenarios as sc
from .config import ExperimentConfig
from .gaussianity import gaussianity_report
from .io import fmt_prob, write_csv, write_json
from .montecarlo import MC_HEADER, McPoint, McResult, false_alarms, misses

log = logging.getLogger(__name__)

CURVE_HEADER = ("n", "gamma_n", "alpha_exact", "alpha_gauss", "alpha_mc", "beta_exact",
                "beta_gauss", "beta_mc", "zeta_n", "c_n", "method_alpha", "method_beta",
                "alpha_exact_cn", "beta_exact_cn", "zeta_alpha", "c_alpha", "t_alpha", "t_beta")
STAGES = ("train", "characterize", "rate", "curves", "simulate", "compare", "tilt")


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage '{stage}' failed: {exc}")
        self.stage = stage


def curve_rows(curve):
    rows = []
    for p in curve.points:
        rows.append((p.n, p.gamma_n,
                     fmt_prob(p.alpha_exact, p.alpha_exact_log10),
                     fmt_prob(p.alpha_gauss, p.alpha_gauss_log10), p.alpha_mc,
                     fmt_prob(p.beta_exact, p.beta_exact_log10),
                     fmt_prob(p.beta_gauss, p.beta_gauss_log10), p.beta_mc,
                     p.zeta_n, p.c_n, p.method_alpha, p.method_beta,
                     p.alpha_exact_cn, p.beta_exact_cn, p.zeta_alpha, p.c_alpha,
                     p.t_alpha, p.t_beta))
    return rows


def _alpha_tag(a):
    return f"a{a:g}"


@dataclass
class Bundle:
    out_dir: Path
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failed: list = field(default_factory=list)
    state: dict = field(default_factory=dict)


class Experiment:
    """Stateful runner; each stage reads what earlier stages stored in ``state``."""

    def __init__(self, cfg: ExperimentConfig, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir or cfg.out_dir)
        self.bundle = Bundle(self.out)
        self.state = self.bundle.state

    # helpers
    def _write_csv(self, name, header, rows):
        write_csv(self.out / name, header, rows)
        self.bundle.files.append(name)

    def _write_json(self, name, obj):
        write_json(self.out / name, obj)
        self.bundle.files.append(name)

    def _rng(self, *keys):
        return sc.stream(self.cfg.seed, *keys)

    def _train_cfg(self, offset=0):
        c = self.cfg
        return TrainConfig(c.train_lr, c.train_epochs, c.batch_size, c.seed * 1000 + offset,
                           c.init_half_width)

    def _rules(self):
        c = self.cfg
        if c.rule == "fixed":
            return [("fixed", ThresholdRule.fixed(c.gamma))]
        return [(_alpha_tag(a), ThresholdRule.clt(a)) for a in c.alphas]

    # stage dispatch
    def run(self, stages=STAGES) -> Bundle:
        self.out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        for stage in STAGES:
            if stage not in stages:
                continue
            if stage == "tilt" and not self.cfg.tilt:
                continue
            fn = getattr(self, f"{self.cfg.scenario}_{stage}", None)
            if fn is None:
                continue
            log.info("stage %s", stage)
            try:
                with warnings.catch_warnings(record=True) as caught:
                    warnings.simplefilter("always", LmgfWarning)
                    fn()
                notes = sorted({str(w.message) for w in caught})
                if notes:
                    self.bundle.summary.setdefault("warnings", {})[stage] = notes
            except Exception as exc:
                self.bundle.failed.append(stage)
                self._manifest(time.time() - t0)
                raise StageError(stage, exc) from exc
        self._manifest(time.time() - t0)
        return self.bundle

    def _manifest(self, elapsed):
        c = self.cfg
        self._write_json("summary.json", self.bundle.summary)
        manifest = {
            "config_sha256": c.digest(),
            "config": c.to_ini(),
            "seed": c.seed,
            "seed_streams": {"train": sc.TRAIN, "characterize": sc.TRAIN if c.overlap else sc.CHAR,
                             "monte_carlo": sc.MC, "probe": sc.PROBE, "tilt": sc.TILT},
            "versions": {"ldperf": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "files": sorted(set(self.bundle.files) | {"manifest.json"}),
            "failed_stages": self.bundle.failed,
            "elapsed_seconds": round(elapsed, 3),
        }
        if c.scenario == "image":
            manifest["scale_substitutions"] = {
                "image_size": f"{c.width}x{c.height}",
                "training_images_per_class": c.train_images,
                "monte_carlo_runs": c.mc_runs,
            }
        write_json(self.out / "manifest.json", manifest)

    # IID scenario
    def _iid_model(self):
        c = self.cfg
        return ShiftModel(c.family, c.theta0, c.theta1, c.scale)

    def iid_train(self):
        c = self.cfg
        st, data = sc.build_iid(self._iid_model(), c.statistic, c.train_size,
                                self._rng(sc.TRAIN), self._train_cfg(), return_data=True)
        self.state["stat"] = st
        self.state["train_data"] = data
        if c.statistic == "d3f":
            save_weights(st.scorer, self.out / "weights.json")
            self.bundle.files.append("weights.json")
            self.bundle.summary["final_training_loss"] = st.scorer.loss_history[-1]

    def iid_characterize(self):
        c = self.cfg
        st = self.state["stat"]
        lm = {}
        for k in (0, 1):
            if c.overlap and self.state["train_data"] is not None:
                scores = st.scorer.score(self.state["train_data"][k])
            else:
                scores = st.elementwise(k, c.char_size, self._rng(sc.CHAR, 0, k))
            lm[k] = lmgf_direct(scores, DEFAULT_GRID)
            self._write_csv(f"lmgf_h{k}.csv", ("t", "phi", "dphi", "d2phi", "ess"),
                            lm[k].to_rows())
        self.state["lmgf"] = lm
        moments = {}
        rows = []
        for n in c.n_list:
            m0 = estimate_moments(st.sample(0, n, c.char_size, self._rng(sc.CHAR, n, 0)))
            m1 = estimate_moments(st.sample(1, n, c.char_size, self._rng(sc.CHAR, n, 1)))
            moments[n] = (m0, m1)
            rows.append((n, *m0, *m1))
        self.state["moments"] = moments
        self._write_csv("moments.csv", ("n", "mu0", "sigma0", "mu1", "sigma1"), rows)

    def iid_rate(self):
        for k, lm in self.state["lmgf"].items():
            lo, hi = lm.dphi.min(), lm.dphi.max()
            rc = rate_curve(lm, np.linspace(lo, hi, 203)[1:-1])
            self._write_csv(f"rate_h{k}.csv", ("gamma", "I", "t_gamma"), rc.to_rows())
        m = self._iid_model()
        self.bundle.summary["kl10"] = m.kl10
        self.bundle.summary["kl01"] = m.kl01

    def _curves(self, lmgf0, lmgf1, moments, tag_prefix=""):
        curves = {}
        for tag, rule in self._rules():
            curve = error_curve(self.cfg.n_list, rule, lmgf0, lmgf1,
                                lambda n: moments(n)[0], lambda n: moments(n)[1])
            curves[tag] = curve
            self._write_csv(f"error_curve_{tag_prefix}{tag}.csv", CURVE_HEADER, curve_rows(curve))
        return curves

    def iid_curves(self):
        lm = self.state["lmgf"]
        curves = self._curves(lambda n: lm[0], lambda n: lm[1],
                              lambda n: self.state["moments"][n])
        self.state["curves"] = curves
        self.bundle.summary["stein_slope"] = {tag: stein_slope(cv) for tag, cv in curves.items()}

    def iid_simulate(self):
        c = self.cfg
        st = self.state["stat"]
        results = {tag: [] for tag, _ in self._rules()}
        for n in c.n_list:
            s0 = st.sample(0, n, c.mc_runs, self._rng(sc.MC, n, 0))
            s1 = st.sample(1, n, c.mc_runs, self._rng(sc.MC, n, 1))
            m0 = self.state["moments"][n][0]
            for tag, rule in self._rules():
                g = rule.threshold(*m0)
                results[tag].append(McPoint(n, g, false_alarms(s0, g), misses(s1, g)))
        self._store_mc(results)

    def _store_mc(self, results, prefix=""):
        mc = {}
        for tag, pts in results.items():
            res = McResult(tuple(pts), self.cfg.seed)
            mc[tag] = res
            self._write_csv(f"mc_{prefix}{tag}.csv", MC_HEADER, res.rows())
            if res.flagged():
                self.bundle.summary.setdefault("few_errors", {})[prefix + tag] = res.flagged()
        self.state.setdefault("mc", {}).update({prefix + t: v for t, v in mc.items()})

    def iid_compare(self):
        self._compare(self.state.get("curves", {}), "")

    def _compare(self, curves, prefix):
        out = {}
        for tag, curve in curves.items():
            mc = self.state.get("mc", {}).get(prefix + tag)
            if mc is None:
                continue
            curve = curve.with_mc([p.alpha.estimate for p in mc.points],
                                  [p.beta.estimate for p in mc.points])
            self._write_csv(f"error_curve_{prefix}{tag}.csv", CURVE_HEADER, curve_rows(curve))
            rows = []
            for p, q in zip(curve.points, mc.points):
                ratio = (p.beta_mc / p.beta_exact) if p.beta_exact > 0 and q.beta.enough else None
                rows.append({"n": p.n, "beta_mc_over_exact": ratio,
                             "alpha_mc": p.alpha_mc, "alpha_target": self._alpha_of(tag)})
            out[prefix + tag] = rows
        self.bundle.summary.setdefault("comparison", {}).update(out)

    def _alpha_of(self, tag):
        return float(tag[1:]) if tag.startswith("a") else None

    def iid_tilt(self):
        c = self.cfg
        tc = TiltConfig(n_mh=c.n_mh, kept=c.kept, burn_in=c.burn_in, thin=c.thin,
                        seed=c.seed * 1000 + sc.TILT)
        st = self.state["stat"]
        rows = []
        for k in (0, 1):
            target = iid_target(self._iid_model(), k, c.n_mh, st.scorer.score)
            for g in c.tilt_gammas:
                res = rate_from_tilting(target, g, tc)
                rows.append((k, g, res.rate, res.t_gamma))
                self._write_csv(f"tilt_h{k}_g{g:g}.csv", ("t", "phi_prime", "se", "acceptance"),
                                res.table)
        self._write_csv("tilt_rates.csv", ("hypothesis", "gamma", "I", "t_gamma"), rows)

    # composite scenario
    def _composite_model(self):
        c = self.cfg
        return CompositeModel(c.family, c.theta0, c.thetas, c.prior or None, c.scale)

    def composite_train(self):
        c = self.cfg
        model = self._composite_model()
        st = sc.build_composite(model, c.statistic, c.train_size, self._rng(sc.TRAIN),
                                self._train_cfg())
        self.state["stat"] = st
        if c.statistic == "d3f":
            save_weights(st.mix, self.out / "weights.json")
            self.bundle.files.append("weights.json")
        reports = []
        for k, th in enumerate(model.thetas):
            probe = sample_iid(model, 1, c.probe_size, self._rng(sc.PROBE, k), theta=th)
            reports.append(rn_condition_check(st.mix, model, th, probe).as_dict())
        self._write_json("rn_report.json", reports)
        self.bundle.summary["rn_condition"] = {str(r["theta_star"]): r["holds"] for r in reports}

    def composite_characterize(self):
        c = self.cfg
        st = self.state["stat"]
        char = {}
        rows = []
        for n in c.n_list:
            t0 = st.sample(0, n, c.char_size, self._rng(sc.CHAR, n, 0))
            entry = {"h0": t0, "h1": {}}
            for k, th in enumerate(c.h1_thetas):
                entry["h1"][th] = st.sample(1, n, c.char_size, self._rng(sc.CHAR, n, 1, k),
                                            theta=th)
            char[n] = entry
            m0 = estimate_moments(t0)
            rows.append((n, *m0, *(v for th in c.h1_thetas
                                   for v in estimate_moments(entry["h1"][th]))))
        self.state["char"] = char
        header = ["n", "mu0", "sigma0"]
        for th in c.h1_thetas:
            header += [f"mu1_{th:g}", f"sigma1_{th:g}"]
        self._write_csv("moments.csv", header, rows)
        big = c.n_list[-1]
        self.bundle.summary["asymptotic_mean_h1"] = {
            f"{th:g}": {"n": big, "mean": float(np.mean(char[big]["h1"][th])),
                        "kl": kl_divergence(c.family, th, c.theta0, c.scale)}
            for th in c.h1_thetas}

    def composite_rate(self):
        c = self.cfg
        lm = {}
        for n in c.n_list:
            entry = self.state["char"][n]
            lm[(n, "h0")] = scaled_lmgf_direct(entry["h0"], n)
            for th in c.h1_thetas:
                lm[(n, th)] = scaled_lmgf_direct(entry["h1"][th], n)
        self.state["lmgf"] = lm
        big = c.n_list[-1]
        self._write_csv(f"lmgf_h0_n{big}.csv", ("t", "phi", "dphi", "d2phi", "ess"),
                        lm[(big, "h0")].to_rows())

    def composite_curves(self):
        c = self.cfg
        lm = self.state["lmgf"]
        curves = {}
        for th in c.h1_thetas:
            def moments(n, th=th):
                e = self.state["char"][n]
                return estimate_moments(e["h0"]), estimate_moments(e["h1"][th])
            for tag, cv in self._curves(lambda n: lm[(n, "h0")], lambda n, th=th: lm[(n, th)],
                                        moments, tag_prefix=f"t{th:g}_").items():
                curves[f"t{th:g}_{tag}"] = cv
        self.state["curves"] = curves

    def composite_simulate(self):
        c = self.cfg
        st = self.state["stat"]
        results = {}
        for n in c.n_list:
            s0 = st.sample(0, n, c.mc_runs, self._rng(sc.MC, n, 0))
            m0 = estimate_moments(self.state["char"][n]["h0"])
            for k, th in enumerate(c.h1_thetas):
                s1 = st.sample(1, n, c.mc_runs, self._rng(sc.MC, n, 1, k), theta=th)
                for tag, rule in self._rules():
                    g = rule.threshold(*m0)
                    key = f"t{th:g}_{tag}"
                    results.setdefault(key, []).append(
                        McPoint(n, g, false_alarms(s0, g), misses(s1, g)))
        self._store_mc(results)

    def composite_compare(self):
        self._compare(self.state.get("curves", {}), "")

    def composite_tilt(self):
        c = self.cfg
        tc = TiltConfig(n_mh=c.n_mh, kept=c.kept, burn_in=c.burn_in, thin=c.thin,
                        seed=c.seed * 1000 + sc.TILT)
        model = self._composite_model()
        mix = self.state["stat"].mix
        rows = []
        for g in c.tilt_gammas:
            res = rate_from_tilting(mixture_target(model, 0, c.n_mh, mix), g, tc)
            rows.append((0, g, res.rate, res.t_gamma))
        self._write_csv("tilt_rates.csv", ("hypothesis", "gamma", "I", "t_gamma"), rows)

    # image scenario
    def _image_models(self):
        c = self.cfg
        train = ImageModel(c.width, c.height, c.p0, c.p1)
        test = ImageModel(c.width, c.height,
                          c.p0 if c.test_p0 is None else c.test_p0,
                          c.p1 if c.test_p1 is None else c.test_p1)
        return train, test

    def image_train(self):
        c = self.cfg
        train_model, test_model = self._image_models()
        self.state["grid"] = sc.circle_grid(test_model, c.radii)
        if c.statistic == "llr":
            self.state["scorer"] = None
            return
        x0, x1 = sc.image_training_set(train_model, c.train_images, c.noise_reps,
                                       self._rng(sc.TRAIN))
        cnn = train_cnn(x0, x1, self._train_cfg())
        save_weights(cnn, self.out / "weights.json")
        self.bundle.files.append("weights.json")
        self.state["scorer"] = lambda imgs: cnn_score(cnn, imgs)
        self.bundle.summary["cnn_train_accuracy"] = cnn.train_accuracy
        self.bundle.summary["final_training_loss"] = cnn.loss_history[-1]
        write_pbm(self.out / "example_h1.pbm", x1[0])
        write_pbm(self.out / "example_h0.pbm", x0[0])
        self.bundle.files += ["example_h1.pbm", "example_h0.pbm"]

    def _image_scorer(self, shape):
        if self.state["scorer"] is not None:
            return self.state["scorer"]
        _, test_model = self._image_models()
        return sc.bernoulli_llr_scorer(test_model, shape)

    def image_characterize(self):
        c = self.cfg
        _, model = self._image_models()
        char = {}
        h0_shared = None
        for i, (shape, n) in enumerate(self.state["grid"]):
            scorer = self._image_scorer(shape)
            if self.state["scorer"] is None or h0_shared is None:
                h0 = sc.image_scores(scorer, model, None, c.char_size, self._rng(sc.CHAR, 0, i))
                if self.state["scorer"] is not None:
                    h0_shared = h0
            else:
                h0 = h0_shared
            h1 = sc.image_scores(scorer, model, shape, c.char_size, self._rng(sc.CHAR, 1, i))
            char[n] = {"h0": h0, "h1": h1, "shape": shape}
        self.state["char"] = char
        first = char[self.state["grid"][0][1]]["h0"]
        rep = gaussianity_report(first)
        self._write_json("gaussianity_h0.json", rep.as_dict())
        self.bundle.summary["gaussianity_h0_pass"] = rep.passed
        rows = []
        for n, e in char.items():
            m0, m1 = estimate_moments(e["h0"]), estimate_moments(e["h1"])
            # per-pixel statistic: mu_n and sqrt(n) * sigma_n
            rows.append((n, m0[0] / n, m0[1] / math.sqrt(n), m1[0] / n, m1[1] / math.sqrt(n)))
        self._write_csv("moments.csv", ("n", "mu0_n", "sqrt_n_sigma0_n", "mu1_n",
                                        "sqrt_n_sigma1_n"), rows)

    def image_rate(self):
        lm = {}
        for n, e in self.state["char"].items():
            lm[(n, 0)] = scaled_lmgf_direct(e["h0"] / n, n)
            lm[(n, 1)] = scaled_lmgf_direct(e["h1"] / n, n)
        self.state["lmgf"] = lm

    def _image_n_list(self):
        return [n for _, n in self.state["grid"]]

    def image_curves(self):
        lm = self.state["lmgf"]
        char = self.state["char"]

        def moments(n):
            m0 = estimate_moments(char[n]["h0"] / n)
            m1 = estimate_moments(char[n]["h1"] / n)
            return m0, m1

        curves = {}
        for tag, rule in self._rules():
            curve = error_curve(self._image_n_list(), rule, lambda n: lm[(n, 0)],
                                lambda n: lm[(n, 1)], lambda n: moments(n)[0],
                                lambda n: moments(n)[1])
            curves[tag] = curve
            self._write_csv(f"error_curve_{tag}.csv", CURVE_HEADER, curve_rows(curve))
        self.state["curves"] = curves

    def image_simulate(self):
        c = self.cfg
        _, model = self._image_models()
        results = {tag: [] for tag, _ in self._rules()}
        h0_shared = None
        for i, (shape, n) in enumerate(self.state["grid"]):
            scorer = self._image_scorer(shape)
            if self.state["scorer"] is None or h0_shared is None:
                s0 = sc.image_scores(scorer, model, None, c.mc_runs, self._rng(sc.MC, 0, i))
                if self.state["scorer"] is not None:
                    h0_shared = s0
            else:
                s0 = h0_shared
            s1 = sc.image_scores(scorer, model, shape, c.mc_runs, self._rng(sc.MC, 1, i))
            mu0, sd0 = estimate_moments(self.state["char"][n]["h0"])
            for tag, rule in self._rules():
                # threshold on the unnormalised statistic, then per pixel
                g = rule.threshold(mu0, sd0)
                results[tag].append(McPoint(n, g / n, false_alarms(s0, g), misses(s1, g)))
        self._store_mc(results)

    def image_compare(self):
        self._compare(self.state.get("curves", {}), "")


def stein_slope(curve) -> float:
    """Least-squares slope of ``-ln beta_exact`` against n."""
    n = curve.n.astype(float)
    y = -curve.column("beta_exact_log10") * math.log(10.0)
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(n[ok], y[ok], 1)[0])


def run_experiment(cfg: ExperimentConfig, out_dir=None, stages=STAGES) -> Bundle:
    """Run the requested stages and write the bundle plus ``manifest.json``."""
    return Experiment(cfg, out_dir).run(stages)
