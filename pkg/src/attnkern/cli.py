"""Command-line pipeline: gen-toy -> dof -> allocate -> distill -> eval, plus verify.

Every subcommand accepts ``--config FILE`` holding a flat JSON object whose
keys are the long flag names with dashes replaced by underscores
(``{"lambda": 0.0625, "samples": 512}``). Flags given on the command line
override the file. Failures exit nonzero after printing one line
``error: <ErrorClass>: <message>`` to stderr.
"""
import argparse
import sys

from . import __version__, formats
from .bounds import verify_kernel_error, verify_integration_error
from .dof import allocate, dof_report, sample_inputs
from .errors import ArgumentError, AttnKernError, FormatError, NumericalError, ResourceError
from .evaluate import attention_l2, kernel_rmse
from .toy import ToyConfig, generate
from .training import TrainConfig, distill

EXIT_CODES = {ArgumentError: 2, FormatError: 3, NumericalError: 4, ResourceError: 5}

# per-subcommand defaults; None means required
DEFAULTS = {
    "gen-toy": dict(out=None, layers=4, heads=2, dim=16, seqlen=32, seqs=16, seed=0,
                    input_mode="gaussian", rank=2, clusters=4, weight_scale=1.0, input_scale=1.0),
    "dof": dict(dump=None, out=None, samples=None, seed=0, normalization="raw", model_id="",
                **{"lambda": None}),
    "allocate": dict(report=None, cost=None, clip=None, out=None),
    "distill": dict(dump=None, alloc=None, out=None, loss="l2", steps=200, batch_size=8,
                    lr_z=0.02, lr_alpha=0.2, seed=0, causal=True, trace=None),
    "eval": dict(dump=None, features=None, metric="kernel-rmse", seed=0, out=None),
    "verify": dict(dump=None, out=None, t=0.5, delta=0.1, trials=100, sampler="uniform",
                   layer=0, head=0, samples=256, seed=0, summary=None, form="squared",
                   pool=4096, **{"lambda": None}),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: ArgumentError: {message}\n")


def _parser():
    p = _Parser(prog="attnkern", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="flat JSON config; flags override it")
        return sp

    sp = add("gen-toy", "generate a query/key dump from the toy attention stack")
    sp.add_argument("--out")
    sp.add_argument("--layers", type=int)
    sp.add_argument("--heads", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--seqlen", type=int)
    sp.add_argument("--seqs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--input-mode", choices=["gaussian", "low-rank", "clustered"])
    sp.add_argument("--rank", type=int)
    sp.add_argument("--clusters", type=int)
    sp.add_argument("--weight-scale", type=float)
    sp.add_argument("--input-scale", type=float)

    sp = add("dof", "estimate per-head degrees of freedom")
    sp.add_argument("--dump")
    sp.add_argument("--lambda", type=float, dest="lambda")
    sp.add_argument("--samples", type=int, help="J, sampled inputs per head")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--normalization", choices=["raw", "mean"])
    sp.add_argument("--model-id")
    sp.add_argument("--out")

    sp = add("allocate", "turn a DoF report into per-layer feature dimensions")
    sp.add_argument("--report")
    sp.add_argument("--cost", type=int)
    sp.add_argument("--clip", type=int)
    sp.add_argument("--out")

    sp = add("distill", "train feature maps layerwise")
    sp.add_argument("--dump")
    sp.add_argument("--alloc")
    sp.add_argument("--loss", choices=["l2", "softmax"])
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr-z", type=float)
    sp.add_argument("--lr-alpha", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--causal", action=argparse.BooleanOptionalAction, default=None)
    sp.add_argument("--trace", help="write layer,head,step,loss rows here")
    sp.add_argument("--out")

    sp = add("eval", "score a feature checkpoint against a dump")
    sp.add_argument("--dump")
    sp.add_argument("--features")
    sp.add_argument("--metric", choices=["kernel-rmse", "attn-l2"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = add("verify", "Monte-Carlo check of the kernel error bounds on one head")
    sp.add_argument("--dump")
    sp.add_argument("--lambda", type=float, dest="lambda")
    sp.add_argument("--t", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--sampler", choices=["uniform", "leverage"])
    sp.add_argument("--layer", type=int)
    sp.add_argument("--head", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--form", choices=["squared", "linear"])
    sp.add_argument("--pool", type=int)
    sp.add_argument("--summary", help="summary report path (default: <out>.summary.json)")
    sp.add_argument("--out")
    return p


def _resolve(ns):
    """Merge defaults < config file < flags."""
    cmd = ns.command
    conf = {}
    if ns.config:
        conf = formats.read_report(ns.config)
        if not isinstance(conf, dict):
            raise FormatError(f"{ns.config}: config must be a JSON object")
    unknown = set(conf) - set(DEFAULTS[cmd])
    if unknown:
        raise ArgumentError(f"unknown config keys for {cmd}: {sorted(unknown)}")
    opts = {}
    for key, default in DEFAULTS[cmd].items():
        flag = getattr(ns, key, None)
        value = flag if flag is not None else conf.get(key, default)
        if value is None and default is None and key not in ("clip", "samples", "trace", "summary"):
            raise ArgumentError(f"{cmd}: --{key.replace('_', '-')} is required")
        opts[key] = value
    return opts


def _gen_toy(o):
    cfg = ToyConfig(o["layers"], o["heads"], o["dim"], o["seqlen"], o["seqs"], o["seed"],
                    o["weight_scale"], o["input_mode"], o["rank"], o["clusters"], o["input_scale"])
    formats.write_qkdf(o["out"], generate(cfg))


def _dof(o):
    dump = formats.read_qkdf(o["dump"])
    rep = dof_report(dump, o["lambda"], o["samples"], o["seed"], o["normalization"], o["model_id"])
    out = formats.dof_report_to_dict(rep)
    out["config"] = o
    formats.write_report(o["out"], out)


def _allocate(o):
    obj = formats.read_report(o["report"])
    alloc = allocate(formats.dof_report_from_dict(obj), o["cost"], o["clip"])
    out = formats.allocation_to_dict(alloc)
    out["config"] = o
    formats.write_report(o["out"], out)


def _distill(o):
    dump = formats.read_qkdf(o["dump"])
    alloc = formats.allocation_from_dict(formats.read_report(o["alloc"]))
    cfg = TrainConfig(loss=o["loss"], steps=o["steps"], batch_size=o["batch_size"],
                      lr_z=o["lr_z"], lr_alpha=o["lr_alpha"], seed=o["seed"], causal=bool(o["causal"]))
    features, traces = distill(dump, alloc.dims, cfg)
    formats.write_lafc(o["out"], features, dump.d)
    if o["trace"]:
        rows = [(s, h, i, repr(float(v)))
                for s, layer in enumerate(traces) for h, tr in enumerate(layer) for i, v in enumerate(tr)]
        formats.atomic_write(o["trace"], formats.rows_to_csv(["layer", "head", "step", "loss"], rows))


def _eval(o):
    dump = formats.read_qkdf(o["dump"])
    features, d = formats.read_lafc(o["features"])
    if d != dump.d:
        raise ArgumentError(f"checkpoint d={d} but dump d={dump.d}")
    if o["metric"] == "kernel-rmse":
        table = kernel_rmse(dump, features)
    else:
        table = attention_l2(dump, features, o["seed"])
    formats.write_report(o["out"], {
        "kind": "eval",
        "metric": o["metric"],
        "layers": dump.S,
        "heads": dump.H,
        "table": [float(v) for v in table.reshape(-1)],
        "mean": float(table.mean()),
        "config": o,
    })


def _verify(o):
    dump = formats.read_qkdf(o["dump"])
    J = min(o["samples"], 2 * dump.T * dump.L)
    data = sample_inputs(dump, o["layer"], o["head"], J, o["seed"])
    kw = dict(trials=o["trials"], seed=o["seed"], sampler=o["sampler"], pool_size=o["pool"], form=o["form"])
    res_i = verify_kernel_error(data, o["lambda"], o["t"], o["delta"], **kw)
    res_ii = verify_integration_error(data, None, o["lambda"], o["t"], o["delta"], **kw)
    header = ["item", "lambda", "t", "delta", "M_required", "M_used", "lhs", "rhs", "violated", "seed"]
    rows = [(r.item, repr(r.lam), repr(r.t), repr(r.delta), r.M_required, r.M_used,
             repr(r.lhs), repr(r.rhs), int(r.violated), r.seed)
            for r in res_i.records + res_ii.records]
    formats.atomic_write(o["out"], formats.rows_to_csv(header, rows))

    def summary(res):
        return {"violation_rate": res.violation_rate, "slack": res.slack, "allowed": res.allowed,
                "pass": res.passed, "N": res.N, "M_required": res.records[0].M_required,
                "trace": res.constants.trace, "op_norm": res.constants.op_norm}

    formats.write_report(o["summary"] or o["out"] + ".summary.json", {
        "kind": "verify", "J": J, "item_i": summary(res_i), "item_ii": summary(res_ii), "config": o,
    })


COMMANDS = {"gen-toy": _gen_toy, "dof": _dof, "allocate": _allocate,
            "distill": _distill, "eval": _eval, "verify": _verify}


def main(argv=None):
    ns = _parser().parse_args(argv)
    try:
        COMMANDS[ns.command](_resolve(ns))
    except AttnKernError as err:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(err, cls)), 1)
        print(f"error: {type(err).__name__}: {_one_line(err)}", file=sys.stderr)
        return code
    except OSError as err:
        print(f"error: {type(err).__name__}: {_one_line(err)}", file=sys.stderr)
        return 6
    return 0


def _one_line(err):
    return " ".join(str(err).split())


if __name__ == "__main__":
    sys.exit(main())
