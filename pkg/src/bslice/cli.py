"""``bslice`` command line: scenario checks, invariants, covers, normal forms
and Moser certification, with deterministic JSON reports."""
from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from . import builtins as B
from . import expr as E
from .actions import (
    ActionError,
    check_invariance,
    check_well_defined,
    isotropy_decomposition,
    product_decomposition,
)
from .bcalc import forms_equivalent, is_b_symplectic
from .charts import equivalent
from .moser import MoserProblem, certify, equivariance_error, relative_primitive, symmetrize
from .parsing import parse
from .scenario import Scenario, ScenarioError, load
from .slice import PipelineError, model_for_orbit
from .torus import (
    CollarModel,
    FiniteCover,
    TorusError,
    check_modular_contract,
    descent_witness,
    lift_form,
    modular_period,
    modular_vector_field,
    quotient_form,
    simplify_simply_connected,
)
SCHEMA = 1
EXIT_OK, EXIT_VALIDATION, EXIT_CERTIFICATION, EXIT_PARSE = 0, 2, 3, 4
EQUIVARIANCE_TOL = 1e-6


def _clean(x):
    """JSON-friendly, stable values."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return float(f"{v:.12g}") if np.isfinite(v) else str(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def _torus_of(scn: Scenario):
    action = scn.action()
    if action is not None:
        return action.torus, action
    if len(scn.tori) == 1:
        return next(iter(scn.tori.values())), None
    raise ScenarioError("scenario needs exactly one torus or an action", None, scn.source)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(scn: Scenario) -> dict:
    seed = scn.seed
    out: dict = {"forms": {}, "tori": {}, "actions": {}, "functions": {}}
    ok = True
    for name, w in sorted(scn.forms.items()):
        if w.degree == 2 and w.chart.dim % 2 == 0:
            rep = is_b_symplectic(w, seed=seed)
            out["forms"][name] = rep.to_dict()
            ok &= rep.ok
    for name, torus in sorted(scn.tori.items()):
        problems = torus.validate(seed)
        rec = {"problems": problems, "declared_order": torus.declared_order}
        rec["discovered_order"] = torus.discover_order(seed)
        rec["compact_declared"] = torus.compact
        for fname, w in sorted(scn.forms.items()):
            if w.chart != torus.collar_chart:
                continue
            collar = CollarModel(torus, w)
            wit = collar.check_well_defined(seed)
            sub = {"well_defined": wit is None}
            if wit is not None:
                sub["witness"] = wit
                problems.append(f"form {fname} is not invariant under the mapping-torus identification")
            try:
                v = modular_vector_field(collar, seed)
                contract = check_modular_contract(collar, v, seed)
                sub["modular_vector_field"] = str(v)
                sub["modular_period"] = modular_period(collar, seed)
                sub["contract"] = contract
                if not contract["ok"]:
                    problems.append(f"modular vector field contract fails for {fname}")
            except TorusError as exc:
                sub["normal_form_error"] = str(exc)
                problems.append(str(exc))
            rec[fname] = sub
        for fname, fs in sorted(scn.functions.items()):
            shift = torus.shift_map()
            res = []
            for text, f in fs:
                if E.free_vars(f) <= set(torus.collar_chart.names):
                    g = E.substitute(f, shift.as_substitution())
                    same = equivalent(f, g, torus.collar_chart, seed=seed)
                    res.append({"f": text, "well_defined": same})
                    if not same:
                        problems.append(f"function {text} is not well defined on the mapping torus")
            out["functions"][fname] = res
        ok &= not problems
        out["tori"][name] = rec
    for name, action in sorted(scn.actions.items()):
        rec = {"group": action.group}
        problems = []
        try:
            rec["base_degree"] = action.circle.base_degree
            if rec["base_degree"] == 0:
                problems.append("circle action is tangent to the leaves")
            rec["rho_1_identity"] = check_well_defined(action, seed)
            if not rec["rho_1_identity"]:
                problems.append("rho_1 is not the identity")
            w = scn.form() if scn.forms else None
            if w is not None and w.chart == action.torus.collar_chart:
                wit = check_invariance(action, w, seed)
                rec["invariant"] = wit is None
                if wit is not None:
                    rec["invariance_witness"] = wit
                    problems.append(f"action does not preserve the form at {wit['element']}")
            if not problems:
                dec = product_decomposition(action, seed)
                rec["decomposition"] = dec.to_dict()
        except (ActionError, ValueError) as exc:
            problems.append(str(exc))
        rec["problems"] = problems
        ok &= not problems
        out["actions"][name] = rec
    out["ok"] = ok
    return out


def cmd_invariants(scn: Scenario) -> dict:
    seed = scn.seed
    torus, action = _torus_of(scn)
    if action is None:
        raise ScenarioError("invariants need an action", None, scn.source)
    w = scn.form()
    collar = CollarModel(torus, w)
    c = modular_period(collar, seed)
    dec = product_decomposition(action, seed)
    k = dec.k
    out = {
        "c": c,
        "declared_period": torus.period,
        "k": k,
        "c_prime": c * k,
        "decomposition": dec.to_dict(),
        "anchors": {},
    }
    ok = c == torus.period
    for name, z in sorted(scn.anchors.items()):
        try:
            iso = isotropy_decomposition(action, z, seed=seed)
            rec = iso.to_dict()
            rec["model_period"] = c * k / iso.l
            rec["l_divides_k"] = k % iso.l == 0
        except (ActionError, ValueError) as exc:
            rec = {"error": str(exc)}
            ok = False
        out["anchors"][name] = rec
    out["ok"] = ok
    return out


def cmd_cover(scn: Scenario) -> dict:
    seed = scn.seed
    torus, action = _torus_of(scn)
    k = product_decomposition(action, seed).k if action is not None else torus.declared_order
    cover = FiniteCover(torus, k)
    w = scn.form()
    lifted = lift_form(cover, w)
    simp = simplify_simply_connected(CollarModel(cover.cover_torus, lifted), local=True, seed=seed)
    base_c = modular_period(CollarModel(torus, w), seed)
    back = quotient_form(cover, lifted, seed)
    out = {
        "k": k,
        "deck_generator": {n: E.to_string(e) for n, e in zip(cover.chart.names, cover.deck(1).components)},
        "group_action": cover.check_group_action(seed),
        "faithful": cover.check_faithful(seed),
        "projection_invariant": cover.check_projection_invariance(seed),
        "lifted_form": lifted.term_strings(),
        "descends": descent_witness(cover, lifted, seed) is None,
        "roundtrip": forms_equivalent(back, w, seed=seed),
        "base_period": base_c,
        "lifted_period": simp.c,
        "period_scaling": simp.c == k * base_c,
    }
    out["ok"] = all(out[key] for key in ("group_action", "faithful", "projection_invariant", "descends", "roundtrip", "period_scaling"))
    return out


def _anchors(scn: Scenario) -> dict:
    return dict(sorted(scn.anchors.items()))


def cmd_normal_form(scn: Scenario, certify_steps: int | None = None, samples: int = 200) -> dict:
    seed = scn.seed
    _, action = _torus_of(scn)
    w = scn.form()
    out = {"anchors": {}}
    ok = True
    certified = True
    for name, z in _anchors(scn).items():
        try:
            res = model_for_orbit(action, w, z, seed)
        except PipelineError as exc:
            out["anchors"][name] = {"error": str(exc), "stage": exc.stage}
            ok = False
            continue
        rec = {
            "model": res.model.to_dict(),
            "isotropy": res.isotropy.to_dict(),
            "decomposition": res.decomposition,
            "normal_form": res.normal_form,
            "notes": res.notes,
        }
        if certify_steps is not None and res.moser_task is not None:
            rec["moser"] = certify(res.moser_task, steps=certify_steps, samples=samples, seed=seed)
            certified &= rec["moser"]["pass"]
        out["anchors"][name] = rec
    out["ok"] = ok
    out["certified"] = certified
    return out


def cmd_moser(scn: Scenario, steps: int = 1000, samples: int = 200) -> dict:
    seed = scn.seed
    if "omega0" in scn.task:
        w0, w1 = scn.form(scn.task["omega0"]), scn.form(scn.task["omega1"])
        anchor = scn.anchors.get(scn.task.get("anchor"), None)
        if anchor is None:
            anchor = next(iter(_anchors(scn).values()), {})
        sym = None
        if "symmetry" in scn.task:
            if scn.task["symmetry"] not in scn.symmetries:
                raise ScenarioError(f"unknown symmetry {scn.task['symmetry']!r}", None, scn.source)
            sym = tuple(scn.symmetries[scn.task["symmetry"]].elements())
        orbit = tuple(o.strip() for o in scn.task.get("orbit", "t").split(",") if o.strip())
        prob = MoserProblem(w0, w1, anchor, orbit=orbit, symmetry=sym)
        rec = certify(prob, steps=steps, samples=samples, seed=seed)
        certified = rec["pass"]
        if sym:
            decomp = symmetrize(relative_primitive(prob, seed), sym)
            err = equivariance_error(prob, decomp, sym, pairs=50, steps=min(steps, 200), seed=seed)
            rec["equivariance_error"] = err
            rec["equivariant"] = err <= EQUIVARIANCE_TOL
            certified = certified and rec["equivariant"]
        return {"moser": rec, "ok": True, "certified": certified}
    out = cmd_normal_form(scn, certify_steps=steps, samples=samples)
    return out


COMMANDS = ("check", "invariants", "cover", "normal-form", "moser")


def run(command: str, scn: Scenario, steps: int | None = None, samples: int | None = None) -> dict:
    if command == "check":
        body = cmd_check(scn)
    elif command == "invariants":
        body = cmd_invariants(scn)
    elif command == "cover":
        body = cmd_cover(scn)
    elif command == "normal-form":
        certify_steps = steps if steps is not None else (
            int(scn.task["steps"]) if _truthy(scn.task.get("certify")) else None
        )
        body = cmd_normal_form(scn, certify_steps, samples or int(scn.task.get("samples", 200)))
    elif command == "moser":
        body = cmd_moser(
            scn, steps or int(scn.task.get("steps", 1000)), samples or int(scn.task.get("samples", 200))
        )
    else:
        raise ValueError(f"unknown command {command}")
    return {
        "schema": SCHEMA,
        "version": __version__,
        "command": command,
        "scenario": scn.source,
        "seed": scn.seed,
        "report": _clean(body),
    }


def _truthy(x) -> bool:
    return str(x).strip().lower() in ("1", "true", "yes", "on")


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def exit_code(report: dict) -> int:
    body = report["report"]
    if not body.get("ok", True):
        return EXIT_VALIDATION
    if not body.get("certified", True):
        return EXIT_CERTIFICATION
    return EXIT_OK


def _parse_anchor(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        k, _, v = part.partition("=")
        if not _:
            raise ScenarioError(f"bad --anchor entry {part!r}; use name=value")
        out[k.strip()] = float(E.evaluate(parse(v, ()), {}))
    return out


def _load(path: str) -> Scenario:
    if path.startswith("builtin:"):
        return B.builtin(path.split(":", 1)[1])
    return load(path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bslice", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("file", help="scenario file, or builtin:<name>")
        s.add_argument("--anchor", help="comma separated coord=value list")
        s.add_argument("--seed", type=int)
        s.add_argument("--json", dest="json_out", help="also write the report here")
        s.add_argument("--steps", type=int)
        s.add_argument("--samples", type=int)
    b = sub.add_parser("builtin")
    b.add_argument("action", choices=("list", "show"))
    b.add_argument("name", nargs="?")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "builtin":
            if args.action == "list":
                print("\n".join(B.names()))
            else:
                if not args.name:
                    raise ScenarioError("builtin show needs a name")
                sys.stdout.write(B.text(args.name))
            return EXIT_OK
        scn = _load(args.file)
        if args.seed is not None:
            scn.task["seed"] = str(args.seed)
        if args.anchor:
            scn.anchors = {"cli": _parse_anchor(args.anchor)}
            scn.task["anchor"] = "cli"
    except (ScenarioError, E.ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        report = run(args.command, scn, args.steps, args.samples)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, ArithmeticError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    text = dumps(report)
    sys.stdout.write(text)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
