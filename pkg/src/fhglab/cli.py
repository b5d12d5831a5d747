"""Command-line harness: instance generation, experiment runs, sweeps, the
dissolution adversary, and the verification suites.

Exit codes: 0 ok, 1 verification failure, 2 usage, 3 I/O failure,
4 engine violation (a policy emitted an illegal decision).

All exact values are printed as "p/q" strings (or "p/q+r/s*sqrt2" for
Q(sqrt2) values); floats appear only in Monte-Carlo columns.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
from fractions import Fraction

from . import adversaries, core, engine, oracles, policies
from .engine import CompetitiveReport, EngineViolation, derive_seed, _rand_below
from .rationals import FHG_DISSOLUTION_BOUND, scalar_to_str

EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ENGINE = 4

DEFAULT_CAPS = {"partition_cap": 12, "exact_cap": 8, "mwm_cap": 20}


def _load_config(path: str | None) -> dict:
    caps = dict(DEFAULT_CAPS)
    caps["seed"] = 0
    if path:
        with open(path) as fh:
            user = json.load(fh)
        for key, value in user.items():
            if key in DEFAULT_CAPS and value > DEFAULT_CAPS[key]:
                print(f"warning: raising {key} to {value} beyond the default "
                      f"{DEFAULT_CAPS[key]}", file=sys.stderr)
            caps[key] = value
    return caps


def _parse_fraction(text: str) -> Fraction:
    return Fraction(text)


def _parse_int_set(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _rand_rational(rng, lo: Fraction, hi: Fraction, max_den: int = 6) -> Fraction:
    den = 1 + _rand_below(rng, max_den)
    lo_n, hi_n = -(-lo.numerator * den // lo.denominator), hi.numerator * den // hi.denominator
    return Fraction(lo_n + _rand_below(rng, hi_n - lo_n + 1), den)


def gen_random_instance(n: int, seed: int, lo: Fraction = Fraction(-10),
                        hi: Fraction = Fraction(10), density: Fraction = Fraction(1)) -> core.SymmetricFHG:
    """Seeded random symmetric instance with rational weights in [lo, hi]."""
    rng = random.Random(derive_seed(seed, "gen-random", n))
    entries = []
    for i in range(n):
        for j in range(i + 1, n):
            if density < 1 and Fraction(_rand_below(rng, 10**6), 10**6) >= density:
                continue
            w = _rand_rational(rng, lo, hi)
            if w != 0:
                entries.append((i, j, w))
    return core.SymmetricFHG(n, entries)


def _cmd_gen(args) -> int:
    if args.family == "random":
        G = gen_random_instance(args.n, args.seed, Fraction(args.lo), Fraction(args.hi),
                                Fraction(args.density))
    elif args.family == "tree":
        G = adversaries.gen_random_tree_domain(args.n, args.seed)
    elif args.family in ("star", "bistar"):
        spec = adversaries.StarSpec.of(
            _parse_int_set(args.I), _parse_int_set(args.J) if args.J else (),
            args.x, Fraction(args.eps))
        G = adversaries.gen_star(spec) if args.family == "star" else adversaries.gen_bistar(spec)
    else:  # pragma: no cover - argparse restricts choices
        raise AssertionError
    try:
        if args.out:
            core.save_instance(G, args.out)
        else:
            json.dump(core.instance_to_json(G), sys.stdout, indent=1, sort_keys=True)
            print()
    except OSError as exc:
        print(f"error: cannot write instance: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def _resolve_policy(alg: str, G) -> policies.OnlinePolicy:
    star_context = None
    if alg.startswith("star:") or ":star:" in alg:
        star_context = _infer_star_view(G)
    return policies.make_policy(alg, star_context=star_context)


def _infer_star_view(G) -> policies.StarView:
    """Recover the star/bi-star role labels from a generated instance file.

    The shape is rigid: one uniform negative fill -(1/eps)^x, positive
    weights that are powers (1/eps)^i of a common base >= 2, stars around at
    most two centers, and in the bi-star case a heaviest edge joining them.
    """
    unshaped = policies.NotAStarShapedInstance(
        "weights do not follow the (1/eps)^i star shape")
    pos = sorted(((w, i, j) for (i, j), w in G.entries if w > 0))
    fills = {w for _, w in G.entries if w <= 0}
    if not pos or len(fills) != 1 or max(fills) >= 0:
        raise unshaped
    fill = -next(iter(fills))
    base = _common_power_base([w for w, _, _ in pos] + [fill])
    if base is None:
        raise unshaped
    x = _log_base(fill, base)
    # bi-star iff the heaviest positive edge links the two star centers,
    # i.e. removing it still leaves both its endpoints covering all edges
    top_w, u, v = pos[-1]
    rest = pos[:-1]
    u_side = [e for e in rest if u in (e[1], e[2])]
    v_side = [e for e in rest if v in (e[1], e[2])]
    if rest and len(u_side) + len(v_side) == len(rest) and (u_side or v_side):
        a, b = (u, v) if u < v else (v, u)
        leaf_index, leaf_center = {}, {}
        for w, i, j in rest:
            center = a if a in (i, j) else b
            leaf = j if center == i else i
            leaf_index[leaf] = _log_base(w, base)
            leaf_center[leaf] = center
        if None in leaf_index.values():
            raise unshaped
        return policies.StarView(a=a, b=b, leaf_index=leaf_index,
                                 leaf_center=leaf_center,
                                 bridge_index=_log_base(top_w, base), x=x)
    # plain star: all positive edges share one endpoint
    common = set(range(G.n))
    for _, i, j in pos:
        common &= {i, j}
    if not common:
        raise unshaped
    a = min(common)
    leaf_index = {}
    for w, i, j in pos:
        leaf = j if i == a else i
        leaf_index[leaf] = _log_base(w, base)
    if None in leaf_index.values():
        raise unshaped
    others = [z for z in range(G.n) if z != a and z not in leaf_index]
    return policies.StarView(a=a, b=min(others) if others else None,
                             leaf_index=leaf_index,
                             leaf_center={d: a for d in leaf_index},
                             bridge_index=None, x=x)


def _common_power_base(values) -> Fraction | None:
    """Smallest base q >= 2 with every value an integer power of q."""
    smallest = min(values)
    for i in range(1, 64):
        root = _nth_root_fraction(smallest, i)
        if root is None or root < 2:
            continue
        if all(_log_base(w, root) is not None for w in values):
            return root
    return None


def _nth_root_fraction(w: Fraction, i: int) -> Fraction | None:
    num = round(w.numerator ** (1 / i))
    den = round(w.denominator ** (1 / i))
    for dn in (num - 1, num, num + 1):
        for dd in (den - 1, den, den + 1):
            if dn > 0 and dd > 0 and Fraction(dn, dd) ** i == w:
                return Fraction(dn, dd)
    return None


def _log_base(w: Fraction, base: Fraction) -> int | None:
    e = 0
    v = Fraction(1)
    while v < w and e < 256:
        v *= base
        e += 1
    return e if v == w else None


def _cmd_run(args, caps) -> int:
    try:
        G = core.load_instance(args.instance)
    except OSError as exc:
        print(f"error: cannot read instance: {exc}", file=sys.stderr)
        return EXIT_IO
    mode = "dissolution" if args.mode == "dissolve" else "strict"
    policy = _resolve_policy(args.alg, G)
    if isinstance(policy, policies.SampledMwmEdge) and policy.k >= G.n:
        print(f"warning: sampling phase k={policy.k} >= n={G.n}; "
              "the run degrades to the empty matching", file=sys.stderr)
    if args.arrival == "random":
        arrival = "random"
    elif args.arrival.startswith("order:"):
        arrival = [int(t) for t in args.arrival[6:].replace("-", ",").split(",")]
    else:
        print("error: --arrival must be 'random' or 'order:<perm>'", file=sys.stderr)
        return EXIT_USAGE
    if arrival != "random" and args.expect == "exact" and G.n > caps["exact_cap"]:
        pass  # fixed-order runs need no expectation cap
    if arrival == "random" and args.expect == "exact" and G.n > caps["exact_cap"]:
        print(f"error: exact expectation needs n <= {caps['exact_cap']} "
              f"(instance has n={G.n}); use --expect mc", file=sys.stderr)
        return EXIT_USAGE
    report = engine.competitive_ratio(
        G, policy, mode, arrival,
        instance=core.instance_id(G), expect=args.expect, samples=args.samples,
        seed=args.seed, partition_cap=caps["partition_cap"], exact_cap=caps["exact_cap"])
    if args.format == "json":
        json.dump(report.to_json(), sys.stdout, indent=1, sort_keys=True)
        print()
    else:
        print(",".join(CompetitiveReport.CSV_COLUMNS))
        print(report.to_csv_row())
    return 0


def _cmd_sweep(args, caps) -> int:
    import glob as globmod

    files = sorted(f for pattern in args.instances for f in globmod.glob(pattern))
    if not files:
        print("error: no instance files matched", file=sys.stderr)
        return EXIT_IO
    rows = []
    for path in files:
        G = core.load_instance(path)
        for alg in args.algs.split(","):
            policy = _resolve_policy(alg, G)
            mode = "dissolution" if args.mode == "dissolve" else "strict"
            report = engine.competitive_ratio(
                G, policy, mode, "random",
                instance=core.instance_id(G), expect=args.expect,
                samples=args.samples, seed=args.seed,
                partition_cap=caps["partition_cap"], exact_cap=caps["exact_cap"])
            rows.append(report.to_csv_row())
    rows.sort()
    out = "\n".join([",".join(CompetitiveReport.CSV_COLUMNS)] + rows) + "\n"
    if args.out:
        try:
            with open(args.out, "w") as fh:
                fh.write(out)
        except OSError as exc:
            print(f"error: cannot write sweep output: {exc}", file=sys.stderr)
            return EXIT_IO
    else:
        sys.stdout.write(out)
    return 0


def _cmd_adversary(args) -> int:
    gamma = Fraction(args.gamma)
    if not gamma > FHG_DISSOLUTION_BOUND:
        print("error: --gamma must exceed 1/(6+4*sqrt2) = "
              f"{scalar_to_str(FHG_DISSOLUTION_BOUND)}", file=sys.stderr)
        return EXIT_USAGE
    policy = policies.make_policy(args.alg)
    budget = adversaries.AdversaryBudget(
        max_phases=args.phases, max_agents_per_phase=args.max_agents,
        max_waves=args.waves)
    try:
        result = adversaries.run_dissolution_adversary(policy, gamma, budget, seed=args.seed)
    except EngineViolation as exc:
        print(f"engine violation: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    print(f"outcome: {result.outcome}")
    print(f"agents: {result.instance.n}")
    for rec in result.phases:
        print(f"phase {rec.index}: ell={rec.ell} jstar={rec.jstar} "
              f"bound={'-' if rec.bound is None else scalar_to_str(rec.bound)}")
    print(f"ratioUpperBound: {scalar_to_str(result.ratio_upper_bound)} "
          f"(~{float(result.ratio_upper_bound):.6f})")
    if args.out:
        try:
            with open(args.out, "w") as fh:
                json.dump(result.to_json(), fh, sort_keys=True)
                fh.write("\n")
        except OSError as exc:
            print(f"error: cannot write bundle: {exc}", file=sys.stderr)
            return EXIT_IO
    return 0


def _cmd_star_prob(args) -> int:
    spec = adversaries.StarSpec.of(
        _parse_int_set(args.I), _parse_int_set(args.J) if args.J else (),
        args.x, Fraction(args.eps))
    h, r = adversaries.star_match_probabilities(args.f, spec)
    print(json.dumps({"f": args.f, "I": sorted(spec.I), "x": spec.x,
                      "h": scalar_to_str(h), "r": scalar_to_str(r)}, sort_keys=True))
    return 0


# -- verification suites ----------------------------------------------------------


def _verify_thm_half_approx(args) -> dict:
    """MWM weight >= half the optimal partition welfare, exact, on seeded
    random instances."""
    failures = []
    for case in range(args.cases):
        G = gen_random_instance(3 + case % (args.n - 2), derive_seed(args.seed, "thm", case))
        _, opt = oracles.optimal_partition(G)
        _, mwm = oracles.max_weight_matching(G)
        if not 2 * mwm >= opt:
            failures.append({"case": case, "seed": args.seed})
    return {"suite": "thm-half-approx", "cases": args.cases, "failures": failures}


def _verify_avgedge(args) -> dict:
    failures = []
    rng = random.Random(derive_seed(args.seed, "avgedge"))
    for case in range(args.cases):
        n = 3 + _rand_below(rng, args.n - 2)
        G = gen_random_instance(n, derive_seed(args.seed, "avgedge", case))
        size = 1 + _rand_below(rng, n)
        C = sorted(random.Random(derive_seed(args.seed, "coal", case)).sample(range(n), size))
        lhs, rhs, ok = oracles.average_edge_bound(G, C)
        if not ok:
            failures.append({"case": case, "C": C,
                             "lhs": scalar_to_str(lhs), "rhs": scalar_to_str(rhs)})
    return {"suite": "avgedge", "cases": args.cases, "failures": failures}


def _verify_starwelfare(args) -> dict:
    failures = []
    rng = random.Random(derive_seed(args.seed, "starwelfare"))
    for leaves in range(1, args.n + 1):
        for _ in range(args.cases):
            x = Fraction(1 + _rand_below(rng, 50), 1 + _rand_below(rng, 9))
            direct = _star_coalition_welfare(leaves, x)
            if oracles.star_welfare(leaves, x) != direct:
                failures.append({"leaves": leaves, "x": scalar_to_str(x)})
    return {"suite": "starwelfare", "cases": args.cases * args.n, "failures": failures}


def _star_coalition_welfare(leaves: int, x) -> Fraction:
    entries = [(0, k, x) for k in range(1, leaves + 1)]
    G = core.SymmetricFHG(leaves + 1, entries)
    return core.coalition_welfare(G, range(leaves + 1))


def _verify_sequence(args) -> dict:
    beta = Fraction(args.beta)
    horizon = oracles.sequence_horizon(beta, args.cases)
    above = oracles.beta_above_sequence_threshold(beta)
    ok = horizon is not None if above else True
    return {"suite": "sequence", "beta": str(beta),
            "above_threshold": above,
            "horizon": horizon, "max_steps": args.cases,
            "failures": [] if ok else [{"beta": str(beta), "horizon": None}]}


def _verify_starprob(args) -> dict:
    failures = []
    for size in range(1, args.maxI + 1):
        spec = adversaries.StarSpec.of(range(1, size + 1))
        try:
            adversaries.star_match_probabilities(args.f, spec)
        except adversaries.RecursionEnumerationMismatch as exc:
            failures.append({"I": size, "error": str(exc)})
    return {"suite": "starprob", "f": args.f, "maxI": args.maxI, "failures": failures}


def _verify_slack(args) -> dict:
    failures = []
    rng = random.Random(derive_seed(args.seed, "slack"))
    count = 0
    for case in range(args.cases):
        eps = Fraction(1, 2 ** (1 + _rand_below(rng, 3)))
        i_size = 1 + _rand_below(rng, 3)
        j_size = _rand_below(rng, 3)
        universe = list(range(1, 8))
        picks = []
        pool = list(universe)
        for _ in range(i_size + j_size):
            picks.append(pool.pop(_rand_below(rng, len(pool))))
        I, J = picks[:i_size], picks[i_size:]
        kind = "star" if not J or _rand_below(rng, 2) == 0 else "bistar"
        spec = adversaries.StarSpec.of(I, J if kind == "bistar" else (), eps=eps)
        for alg in ("greedy", "sample-mwm:k=3", "star:f=one"):
            _, _, slack = adversaries.max_edge_conversion_check(alg, spec, kind)
            count += 1
            if slack < 0:
                failures.append({"case": case, "alg": alg, "kind": kind})
    return {"suite": "slack", "cases": count, "failures": failures}


def _verify_wrapper(args) -> dict:
    import itertools

    failures = []
    for case in range(args.cases):
        n = 3 + case % (args.n - 2)
        G = adversaries.gen_random_tree_domain(n, derive_seed(args.seed, "wrapper", case))
        inner = policies.NaiveJoinBestNeighbor()
        wrapper = policies.RestrictToMatching(inner)
        for order in itertools.permutations(range(n)):
            part, _ = engine.run_online(G, order, wrapper, "strict", record_snapshots=False)
            inner_part, _ = engine.run_online(G, order, inner, "strict", record_snapshots=False)
            if not core.partition_welfare(G, part) >= core.partition_welfare(G, inner_part):
                failures.append({"case": case, "order": list(order)})
    return {"suite": "wrapper", "cases": args.cases, "failures": failures}


def _verify_prefix(args) -> dict:
    failures = []
    for size in range(1, args.maxI + 1):
        spec = adversaries.StarSpec.of(range(1, size + 1), range(size + 1, 2 * size + 1))
        if not adversaries.bistar_prefix_multisets_match(spec):
            failures.append({"I": size})
    return {"suite": "prefix", "maxI": args.maxI, "failures": failures}


VERIFY_SUITES = {
    "thm-half-approx": _verify_thm_half_approx,
    "avgedge": _verify_avgedge,
    "starwelfare": _verify_starwelfare,
    "sequence": _verify_sequence,
    "starprob": _verify_starprob,
    "slack": _verify_slack,
    "wrapper": _verify_wrapper,
    "prefix": _verify_prefix,
}


def _cmd_verify(args) -> int:
    summary = VERIFY_SUITES[args.suite](args)
    ok = not summary["failures"]
    summary["pass"] = ok
    json.dump(summary, sys.stdout, sort_keys=True)
    print()
    return 0 if ok else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fhglab",
                                 description="online coalition formation lab")
    ap.add_argument("--config", help="JSON config file overriding caps/seed")
    sub = ap.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate an instance file")
    gen.add_argument("family", choices=["random", "tree", "star", "bistar"])
    gen.add_argument("--n", type=int, default=6)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--lo", default="-10")
    gen.add_argument("--hi", default="10")
    gen.add_argument("--density", default="1")
    gen.add_argument("--I", default="1")
    gen.add_argument("--J", default="")
    gen.add_argument("--eps", default="1/2")
    gen.add_argument("--x", type=int, default=None)
    gen.add_argument("--out")

    run = sub.add_parser("run", help="run one experiment, emit a report row")
    run.add_argument("--instance", required=True)
    run.add_argument("--alg", required=True)
    run.add_argument("--mode", choices=["strict", "dissolve"], default="strict")
    run.add_argument("--arrival", default="random")
    run.add_argument("--expect", choices=["exact", "mc"], default="exact")
    run.add_argument("--samples", type=int, default=10000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--format", choices=["csv", "json"], default="csv")

    sweep = sub.add_parser("sweep", help="run algs over many instances, emit CSV")
    sweep.add_argument("--instances", nargs="+", required=True)
    sweep.add_argument("--algs", required=True)
    sweep.add_argument("--mode", choices=["strict", "dissolve"], default="strict")
    sweep.add_argument("--expect", choices=["exact", "mc"], default="mc")
    sweep.add_argument("--samples", type=int, default=10000)
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--out")

    adv = sub.add_parser("adversary", help="run the phased dissolution adversary")
    adv.add_argument("--alg", required=True)
    adv.add_argument("--gamma", required=True)
    adv.add_argument("--phases", type=int, default=3)
    adv.add_argument("--waves", type=int, default=1000)
    adv.add_argument("--max-agents", type=int, default=200_000)
    adv.add_argument("--seed", type=int, default=0)
    adv.add_argument("--out")

    ver = sub.add_parser("verify", help="run an invariant suite")
    ver.add_argument("suite", choices=sorted(VERIFY_SUITES))
    ver.add_argument("--cases", type=int, default=100)
    ver.add_argument("--n", type=int, default=7)
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--beta", default="18/100")
    ver.add_argument("--f", default="one")
    ver.add_argument("--maxI", type=int, default=4)

    sp = sub.add_parser("star-prob", help="exact h/r for a star policy")
    sp.add_argument("--I", required=True)
    sp.add_argument("--J", default="")
    sp.add_argument("--eps", default="1/2")
    sp.add_argument("--x", type=int, default=None)
    sp.add_argument("--f", default="one")

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    caps = _load_config(args.config)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        if args.command == "run":
            return _cmd_run(args, caps)
        if args.command == "sweep":
            return _cmd_sweep(args, caps)
        if args.command == "adversary":
            return _cmd_adversary(args)
        if args.command == "verify":
            return _cmd_verify(args)
        if args.command == "star-prob":
            return _cmd_star_prob(args)
    except EngineViolation as exc:
        print(f"engine violation: {exc}", file=sys.stderr)
        return EXIT_ENGINE
    except core.InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
