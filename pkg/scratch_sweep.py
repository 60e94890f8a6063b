"""Sweep planner-side variants: plan style, depth, layers; probe latent quality."""

import sys
import time
import numpy as np
from sklearn.linear_model import LogisticRegression

from latentlink.config import ExperimentConfig
from latentlink import workflows as W
from latentlink.encoding import planner_prompt
from latentlink.planner import UnmaskingSchedule, sample
from latentlink.projector import plan_latents


def run_variant(name, style, depth, entries, layers, epochs=35, plan_width=6):
    cfg = ExperimentConfig()
    cfg.out_dir = f"/tmp/sweep_{name}"
    cfg.data.train = 900
    cfg.data.kv_plan_style = style
    cfg.data.kv_depth = depth
    cfg.data.kv_entries = entries
    cfg.model.planner_layers = layers
    cfg.planner_train.epochs = epochs
    cfg.layout.plan_length = plan_width
    cfg.layout.schedule_steps = plan_width  # one commit per step
    t0 = time.perf_counter()
    W.cmd_train_planner(cfg)
    train_s = time.perf_counter() - t0

    vocab = W.build_vocab()
    layout = W.layout_of(cfg)
    train, val, test = W.load_splits(cfg)
    planner, _, _ = W.load_agent(f"{cfg.out_dir}/planner.ldarm")
    planner.set_frozen(True)
    # inference always at budget 6 regardless of training width
    budget = 6
    sched = UnmaskingSchedule.uniform(budget, budget)
    exact = 0
    for s in list(val)[:80]:
        prompt = planner_prompt(vocab, s.question)
        final = sample(planner, prompt, budget, sched)
        exact += int(vocab.decode(final[len(prompt):], strict=False) == s.plan[:budget])
    X, y1, y2 = [], [], []
    for s in list(train)[:400] + list(val):
        lat, _ = plan_latents(planner, vocab, s.question, budget, sched)
        X.append(lat.states.reshape(-1))
        y1.append(int(s.answer[0]))
        y2.append(int(s.answer[1]))
    X, y1, y2 = np.array(X), np.array(y1), np.array(y2)
    accs = []
    for y in (y1, y2):
        clf = LogisticRegression(max_iter=2000).fit(X[:400], y[:400])
        accs.append(clf.score(X[400:], y[400:]))
    print(f"{name:>10}: train={train_s:5.0f}s plan-exact={exact}/80 "
          f"probe v1={accs[0]:.3f} v2={accs[1]:.3f}", flush=True)


which = sys.argv[1:] or ["A", "B", "D"]
if "A" in which:
    run_variant("A", "resolved", 2, 4, 2)
if "B" in which:
    run_variant("B", "chain", 3, 4, 2)
if "C" in which:
    run_variant("C", "chain", 3, 4, 2, plan_width=12)
if "D" in which:
    run_variant("D", "resolved", 3, 4, 3)
if "E" in which:
    run_variant("E", "chain", 2, 4, 2)
