"""End-to-end acceptance checks, one verdict line per criterion.

Run with plain pytest; each test prints `[acceptance] <criterion>: PASS/FAIL`
past the capture so the verdict is visible in any log. The experiment
criteria run the frozen seeded suites; timing bands are deliberately loose
(calibrated simulator, strict orderings).
"""

import itertools
import math
import random
import time

import pytest

from adaptbt.bench import (
    DEFAULT_DEVICES,
    DEFAULT_STRATEGIES,
    EpisodeProbe,
    canonical_tree_text,
    format_results_csv,
    make_config,
    run_episode,
    run_experiment,
    trial_rng,
)
from adaptbt.core import NO_STRATEGIES
from adaptbt.strategies import DataStore, FTRecord, select_strategy, \
    remap_handle_angle
from adaptbt.treedef import parse_tree_definition, validate_switch_coverage
from test_core_oracle import run_case, shapes_with

SEED_A = 7
SEED_B = 7
SEED_C = 7

ALL_IDS = [s.id for s in DEFAULT_STRATEGIES]


def verdict(capsys, label, passed):
    with capsys.disabled():
        print(f"\n[acceptance] {label}: {'PASS' if passed else 'FAIL'}")


def fastest_success(results):
    return min(r.sim_time for r in results if r.success)


def test_criterion_1_engine_matches_reference_oracle(capsys):
    passed = False
    try:
        started = time.perf_counter()
        for letters in itertools.product("SFR", repeat=4):
            schedule = "".join(letters)
            for shape in shapes_with(1):
                run_case(shape, [schedule])
        rng = random.Random(424242)
        for n_leaves, samples in ((2, 40), (3, 12), (4, 5)):
            for shape in shapes_with(n_leaves):
                for _ in range(samples):
                    schedules = ["".join(rng.choice("SFR") for _ in range(4))
                                 for _ in range(n_leaves)]
                    run_case(shape, schedules)
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"oracle sweep took {elapsed:.1f}s"
        passed = True
    finally:
        verdict(capsys, "1 engine/reference oracle equivalence", passed)


def test_criterion_2_remap_worked_example_and_properties(capsys):
    passed = False
    try:
        got = remap_handle_angle(math.radians(310.0), 3, 0.0,
                                 math.radians(180.0))
        assert got == pytest.approx(math.radians(70.0), abs=1e-12)

        rng = random.Random(55221)
        for _ in range(10_000):
            order = rng.randint(1, 8)
            symmetry = 2.0 * math.pi / order
            angle_min = rng.uniform(-math.pi, math.pi)
            angle_max = angle_min + symmetry + rng.uniform(0.0, 1.0)
            measured = rng.uniform(-20.0, 20.0)
            result = remap_handle_angle(measured, order, angle_min, angle_max)
            assert angle_min <= result < angle_min + symmetry
            steps = (measured - result) / symmetry
            assert abs(steps - round(steps)) < 1e-9
            again = remap_handle_angle(result, order, angle_min, angle_max)
            assert again == result
        passed = True
    finally:
        verdict(capsys, "2 remap worked example + 10k properties", passed)


def test_criterion_3_selection_rule_vs_brute_force(capsys):
    passed = False
    try:
        def run_select(m):
            store = DataStore()
            if m > 0.0:
                store.add(FTRecord("dev", 1, 1, 0.0, m))
            return select_strategy(store, "dev", DEFAULT_STRATEGIES)

        def brute_force(m):
            viable = [s for s in DEFAULT_STRATEGIES if s.ft_limit >= m]
            if not viable:
                return NO_STRATEGIES
            return min(viable, key=lambda s: s.ft_limit).id

        rng = random.Random(90125)
        samples = [rng.uniform(0.0, 6.5) for _ in range(1000)]
        samples += [0.5, 5.0, 5.000001, 0.0]
        for m in samples:
            chosen = run_select(m)
            assert chosen == brute_force(m)
            if m <= 0.5:
                assert chosen == "low_torque"
            elif m <= 5.0:
                assert chosen == "high_torque"
            else:
                assert chosen == NO_STRATEGIES
        passed = True
    finally:
        verdict(capsys, "3 selection rule vs brute force", passed)


def test_criterion_4_experiment_a_seeded_suite(capsys):
    passed = False
    try:
        fastest = {}
        for behavior in ("low", "high"):
            results, _ = run_experiment(make_config("A", behavior, SEED_A))
            assert len(results) == 10
            for r in results:
                assert r.success, f"{behavior} trial {r.trial} failed"
                assert r.attempts_consumed <= 5
            fastest[behavior] = fastest_success(results)
        assert fastest["low"] < fastest["high"]
        assert 83.0 * 0.75 <= fastest["low"] <= 83.0 * 1.25
        assert 306.0 * 0.75 <= fastest["high"] <= 306.0 * 1.25
        passed = True
    finally:
        verdict(capsys, "4 experiment A completions + time bands", passed)


def test_criterion_5_experiment_b_seeded_suite(capsys):
    passed = False
    try:
        outcomes = {}
        for behavior in ("low", "high", "adaptive"):
            results, _ = run_experiment(make_config("B", behavior, SEED_B))
            outcomes[behavior] = results
        assert all(not r.success for r in outcomes["low"])
        for behavior in ("high", "adaptive"):
            for r in outcomes[behavior]:
                assert r.success and r.attempts_consumed <= 5
        assert fastest_success(outcomes["adaptive"]) < \
            fastest_success(outcomes["high"])
        for r in outcomes["adaptive"]:
            assert r.strategy_sequence[-1] == "high_torque"

        # the store resets per trial, so each episode replays standalone
        for index in range(10):
            probe = EpisodeProbe()
            run_episode(DEFAULT_DEVICES["testB"], DEFAULT_STRATEGIES,
                        DataStore(), trial_rng(SEED_B, index),
                        trial=index + 1, target_angle=math.inf,
                        num_attempts=5, probe=probe)
            at_switch = next(m for sid, m in probe.selections
                             if sid == "high_torque")
            assert at_switch > 0.5
        passed = True
    finally:
        verdict(capsys, "5 experiment B switch behavior", passed)


def test_criterion_6_experiment_c_strategy_matrix(capsys):
    passed = False
    try:
        runs = {}
        stores = {}
        for behavior in ("low", "high", "adaptive"):
            results, store = run_experiment(make_config("C", behavior, SEED_C))
            runs[behavior] = {(r.device_id, r.trial): r for r in results}
            stores[behavior] = store

        adaptive = runs["adaptive"]
        assert all(r.success for r in adaptive.values())
        assert adaptive[("normal", 1)].strategy_sequence == ("low_torque",)
        assert adaptive[("normal", 2)].strategy_sequence == ("low_torque",)
        assert adaptive[("stiff", 1)].strategy_sequence == \
            ("low_torque", "high_torque")
        assert adaptive[("stiff", 2)].strategy_sequence == ("high_torque",)

        low = runs["low"]
        assert not low[("stiff", 1)].success
        second = low[("stiff", 2)]
        assert not second.success
        assert second.sim_time < 5.0
        assert second.strategy_sequence == ()
        assert second.failure_reasons == (NO_STRATEGIES,)
        # no motion in trial 2: the retained store holds no trial-2 rows
        stiff_trials = {record.trial
                        for record in stores["low"].records
                        if record.device_id == "stiff"}
        assert stiff_trials == {1}

        assert all(r.success for r in runs["high"].values())

        for trial in (1, 2):
            a = adaptive[("normal", trial)].sim_time
            b = low[("normal", trial)].sim_time
            assert abs(a - b) <= 0.10 * b
        a = adaptive[("stiff", 2)].sim_time
        b = runs["high"][("stiff", 2)].sim_time
        assert abs(a - b) <= 0.10 * b
        passed = True
    finally:
        verdict(capsys, "6 experiment C strategy matrix", passed)


def test_criterion_7_seeded_replay_is_byte_identical(capsys):
    passed = False
    try:
        suites = [("A", "low", SEED_A), ("B", "adaptive", SEED_B),
                  ("C", "adaptive", SEED_C)]
        for experiment, behavior, seed in suites:
            emitted = []
            for _ in range(3):
                results, _ = run_experiment(
                    make_config(experiment, behavior, seed))
                emitted.append(format_results_csv(results))
            assert emitted[0] == emitted[1] == emitted[2]
        passed = True
    finally:
        verdict(capsys, "7 byte-identical seeded replays", passed)


def test_criterion_8_canonical_tree_validation(capsys):
    passed = False
    try:
        text = canonical_tree_text(ALL_IDS)
        parsed = parse_tree_definition(text)
        assert parsed.ok and parsed.diagnostics == []
        clean = validate_switch_coverage(parsed.document, set(ALL_IDS))
        assert clean == []

        start = text.index(f'          <Case value="{NO_STRATEGIES}">')
        end = text.index("</Case>", start) + len("</Case>\n")
        broken = parse_tree_definition(text[:start] + text[end:])
        assert broken.ok
        diagnostics = validate_switch_coverage(broken.document, set(ALL_IDS))
        errors = [d for d in diagnostics if d.severity == "error"]
        assert len(errors) == 1
        assert errors[0].rule == "switch-coverage"
        assert NO_STRATEGIES in errors[0].message
        passed = True
    finally:
        verdict(capsys, "8 canonical tree validation", passed)
