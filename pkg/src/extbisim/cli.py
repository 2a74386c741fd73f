"""Command-line driver: ``extbisim <command> ...``.

Every command that runs an algorithm appends one report line per phase (plus
a ``total`` line) to a CSV file, or prints them when no ``--report`` is
given. The report schema is ``REPORT_HEADER``.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import time

from . import __version__
from .bisim import InvariantError, partition_dag
from .generator import SHAPES, GenSpec, generate, generate_xml
from .graphio import (
    PARTITION_DTYPE,
    PARTITION_MAGIC,
    CoverageError,
    LabelTable,
    ValidationError,
    build_quotient,
    compare,
    copy_to_file,
    edges_from_text,
    edges_to_text,
    nodes_from_text,
    nodes_to_text,
    open_edges,
    open_nodes,
    open_partition,
    partition_from_text,
    partition_to_text,
    validate_input,
)
from .iomodel import (
    DEFAULT_BLOCK,
    DEFAULT_MEMORY,
    BlockDevice,
    FormatError,
    IoStats,
    MachineConfig,
    StorageError,
)
from .xmlindex import XmlParseError, ak_index, fb_index, one_index

REPORT_HEADER = ("command,phase,reads,writes,bytes_read,bytes_written,memory,block_size,"
                 "variant,k,seed,seconds,blocks,collisions")
BENCH_HEADER = "sweep,value,nodes,edges,ios,ios_per_element,seconds_per_element,blocks"

EXIT_OK = 0
EXIT_INPUT = 1      # invalid input files or arguments
EXIT_STORAGE = 3    # file system trouble
EXIT_INTERNAL = 4   # an internal consistency check failed

_SIZE = re.compile(r"^\s*(\d+)\s*([KMG]?)(?:I?B)?\s*$", re.IGNORECASE)
_SUFFIX = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30}


def parse_size(text: str) -> int:
    """``"256M"`` -> bytes. Suffixes K, M, G are powers of 1024; ``B``/``iB`` may follow."""
    m = _SIZE.match(text)
    if not m or int(m.group(1)) == 0:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return int(m.group(1)) * _SUFFIX[m.group(2).upper()]


class Report:
    def __init__(self, path: str | None, command: str, args):
        self.path = path
        self.command = command
        self.echo = dict(memory=args.memory, block_size=args.block_size,
                         variant=getattr(args, "variant", "") or "",
                         k=getattr(args, "k", "") if getattr(args, "k", None) is not None else "",
                         seed=getattr(args, "seed", "") if getattr(args, "seed", None) is not None else "")

    def lines(self, phases: dict[str, IoStats], total: IoStats, seconds: float, blocks,
              collisions="") -> list[str]:
        e = self.echo
        tail = f"{e['memory']},{e['block_size']},{e['variant']},{e['k']},{e['seed']}"
        out = []
        for name, st in list(phases.items()) + [("total", total)]:
            secs = f"{seconds:.3f}" if name == "total" else ""
            b = blocks if name == "total" else ""
            c = collisions if name == "total" else ""
            out.append(f"{self.command},{name},{st.reads},{st.writes},{st.bytes_read},"
                       f"{st.bytes_written},{tail},{secs},{b},{c}")
        return out

    def emit(self, *a, **kw) -> None:
        _emit_csv(self.path, REPORT_HEADER, self.lines(*a, **kw))


def _emit_csv(path: str | None, header: str, lines: list[str]) -> None:
    if path is None:
        print(header)
        print("\n".join(lines))
        return
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as fh:
        if fresh:
            fh.write(header + "\n")
        fh.write("\n".join(lines) + "\n")


def _device(args) -> BlockDevice:
    return BlockDevice(MachineConfig(args.memory, args.block_size, args.tmp))


def _input(dev, args, path, kind, labels=None):
    """Open an interchange file, converting from text first when ``--format text``."""
    if args.format == "bin":
        return {"nodes": open_nodes, "edges": open_edges, "partition": open_partition}[kind](dev, path)
    tmp = dev.temp_path(f"in-{kind}")
    if kind == "nodes":
        return nodes_from_text(dev, path, tmp, labels)
    if kind == "edges":
        return edges_from_text(dev, path, tmp)
    return partition_from_text(dev, path, tmp)


def _write_partition(args, part, out):
    if args.format == "bin":
        copy_to_file(part, out, PARTITION_DTYPE, PARTITION_MAGIC)
    else:
        partition_to_text(part, out)


# -- commands ----------------------------------------------------------------------

def cmd_gen(args) -> int:
    if args.shape == "xml":
        meta = generate_xml(args.out, args.n, args.seed, alphabet=args.alphabet,
                            shape=args.tree_shape)
        print(" ".join(f"{k}={v}" for k, v in meta.items()))
        return EXIT_OK
    if not args.nodes or not args.edges:
        raise ValueError("--nodes and --edges are required for graph shapes")
    spec = GenSpec(args.shape, args.n, args.p, args.alphabet, args.seed)
    with _device(args) as dev:
        if args.format == "bin":
            res = generate(spec, dev, args.nodes, args.edges)
        else:
            res = generate(spec, dev)
            nodes_to_text(res.nodes, args.nodes)
            edges_to_text(res.edges, args.edges)
    print(" ".join(f"{k}={v}" for k, v in res.meta.items()))
    return EXIT_OK


def cmd_validate(args) -> int:
    labels = LabelTable() if args.format == "text" else None
    with _device(args) as dev:
        nodes = _input(dev, args, args.nodes, "nodes", labels)
        edges = _input(dev, args, args.edges, "edges")
        rep = validate_input(nodes, edges)
    print("\n".join(rep.lines()))
    return EXIT_OK if rep.ok else EXIT_INPUT


def cmd_partition(args) -> int:
    labels = LabelTable() if args.format == "text" else None
    report = Report(args.report, "partition", args)
    with _device(args) as dev:
        nodes = _input(dev, args, args.nodes, "nodes", labels)
        edges = _input(dev, args, args.edges, "edges")
        t0 = time.perf_counter()
        res = partition_dag(dev, nodes, edges, args.variant, validate=not args.no_validate)
        secs = time.perf_counter() - t0
        _write_partition(args, res.partition, args.out)
    report.emit(res.phase_stats, res.total, secs, res.blocks, res.collisions)
    return EXIT_OK


def cmd_xml(args) -> int:
    if args.mode == "ak" and args.k is None:
        raise ValueError("--mode ak needs --k")
    labels = LabelTable()
    report = Report(args.report, f"xml-{args.mode}", args)
    with _device(args) as dev:
        t0 = time.perf_counter()
        if args.mode == "1index":
            res = one_index(dev, args.document, labels=labels)
        elif args.mode == "ak":
            res = ak_index(dev, args.document, args.k, labels=labels)
        else:
            res = fb_index(dev, args.document, labels=labels)
        secs = time.perf_counter() - t0
        _write_partition(args, res.partition, args.out)
    if args.labels:
        labels.save(args.labels)
    report.emit(res.phase_stats, res.total, secs, res.blocks)
    return EXIT_OK


def cmd_compare(args) -> int:
    with _device(args) as dev:
        p1 = _input(dev, args, args.p1, "partition")
        p2 = _input(dev, args, args.p2, "partition")
        rel = compare(p1, p2)
    print(rel)
    return EXIT_OK


def cmd_quotient(args) -> int:
    labels = LabelTable() if args.format == "text" else None
    with _device(args) as dev:
        nodes = _input(dev, args, args.nodes, "nodes", labels)
        edges = _input(dev, args, args.edges, "edges")
        part = _input(dev, args, args.partition, "partition")
        if args.format == "bin":
            q = build_quotient(nodes, edges, part, nodes_path=args.nodes_out,
                               edges_path=args.edges_out)
        else:
            q = build_quotient(nodes, edges, part)
            nodes_to_text(q.nodes, args.nodes_out, labels)
            edges_to_text(q.edges, args.edges_out)
        print(f"blocks={len(q.nodes)} block_edges={len(q.edges)}")
    return EXIT_OK


def cmd_convert(args) -> int:
    labels = LabelTable.load(args.labels) if args.labels and os.path.exists(args.labels) else None
    with _device(args) as dev:
        if args.to == "bin":
            if args.kind == "nodes":
                labels = labels or LabelTable()
                nodes_from_text(dev, args.src, args.dst, labels)
                if args.labels:
                    labels.save(args.labels)
            elif args.kind == "edges":
                edges_from_text(dev, args.src, args.dst)
            else:
                partition_from_text(dev, args.src, args.dst)
        else:
            if args.kind == "nodes":
                nodes_to_text(open_nodes(dev, args.src), args.dst, labels)
            elif args.kind == "edges":
                edges_to_text(open_edges(dev, args.src), args.dst)
            else:
                partition_to_text(open_partition(dev, args.src), args.dst)
    return EXIT_OK


def bench_rows(sweep: str, values: list[int], *, shape: str, n: int, memory: int,
               block_size: int, variant: str, k: int, seed: int, tmp: str | None) -> list[str]:
    """Run one benchmark per value and return CSV rows (see ``BENCH_HEADER``)."""
    rows = []
    for v in values:
        nn = v if sweep == "n" else n
        mem = v if sweep == "memory" else memory
        with BlockDevice(MachineConfig(mem, block_size, tmp)) as dev:
            if shape == "xml":
                doc = os.path.join(dev.directory, "bench.xml")
                generate_xml(doc, nn, seed)
                t0 = time.perf_counter()
                res = ak_index(dev, doc, v) if sweep == "k" else one_index(dev, doc)
                secs = time.perf_counter() - t0
                elements = 2 * res.nodes - 1
                nodes, edges, blocks, ios = res.nodes, res.nodes - 1, res.blocks, res.total.total
            else:
                g = generate(GenSpec(shape, nn, seed=seed), dev)
                t0 = time.perf_counter()
                res = partition_dag(dev, g.nodes, g.edges, variant)
                secs = time.perf_counter() - t0
                nodes, edges, blocks, ios = res.nodes, res.edges, res.blocks, res.total.total
                elements = nodes + edges
        rows.append(f"{sweep},{v},{nodes},{edges},{ios},{ios / elements:.6f},"
                    f"{secs / elements:.3e},{blocks}")
    return rows


def cmd_bench(args) -> int:
    if args.sweep == "k" and args.shape != "xml":
        raise ValueError("a k sweep needs --shape xml")
    values = [parse_size(v) if args.sweep == "memory" else int(float(v)) for v in args.values]
    rows = bench_rows(args.sweep, values, shape=args.shape, n=args.n, memory=args.memory,
                      block_size=args.block_size, variant=args.variant, k=args.k or 0,
                      seed=args.seed, tmp=args.tmp)
    _emit_csv(args.report, BENCH_HEADER, rows)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--memory", type=parse_size, default=DEFAULT_MEMORY,
                        help="memory budget M, e.g. 256M (default 256M)")
    common.add_argument("--block-size", type=parse_size, default=DEFAULT_BLOCK,
                        help="block size B, e.g. 64K (default 64K)")
    common.add_argument("--tmp", default=None, help="directory for temporary files")
    common.add_argument("--format", choices=("bin", "text"), default="bin",
                        help="format of graph and partition files")
    common.add_argument("--report", default=None, help="append CSV report lines here")

    p = argparse.ArgumentParser(prog="extbisim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a benchmark graph or document")
    g.add_argument("--shape", choices=SHAPES + ("xml",), required=True)
    g.add_argument("--n", type=lambda s: int(float(s)), required=True)
    g.add_argument("--p", type=float, default=None)
    g.add_argument("--alphabet", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--nodes", help="node file to write")
    g.add_argument("--edges", help="edge file to write")
    g.add_argument("--out", help="XML document to write (--shape xml)")
    g.add_argument("--tree-shape", choices=("recursive", "deep"), default="recursive")
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("validate", parents=[common], help="check input files")
    v.add_argument("nodes")
    v.add_argument("edges")
    v.set_defaults(func=cmd_validate)

    pa = sub.add_parser("partition", parents=[common], help="bisimulation partition of a DAG")
    pa.add_argument("nodes")
    pa.add_argument("edges")
    pa.add_argument("--out", required=True)
    pa.add_argument("--variant", choices=("rank-label", "rank-label-hash"), default="rank-label")
    pa.add_argument("--no-validate", action="store_true", help="skip the input checks")
    pa.add_argument("--seed", type=int, default=None, help="echoed in the report")
    pa.set_defaults(func=cmd_partition)

    x = sub.add_parser("xml", parents=[common], help="structural index of an XML document")
    x.add_argument("document")
    x.add_argument("--mode", choices=("1index", "ak", "fb"), default="1index")
    x.add_argument("--k", type=int, default=None)
    x.add_argument("--out", required=True)
    x.add_argument("--labels", default=None, help="write the tag table as CSV")
    x.set_defaults(func=cmd_xml)

    c = sub.add_parser("compare", parents=[common], help="refinement relation of two partitions")
    c.add_argument("p1")
    c.add_argument("p2")
    c.set_defaults(func=cmd_compare)

    q = sub.add_parser("quotient", parents=[common], help="quotient graph of a partition")
    q.add_argument("nodes")
    q.add_argument("edges")
    q.add_argument("partition")
    q.add_argument("--nodes-out", required=True)
    q.add_argument("--edges-out", required=True)
    q.set_defaults(func=cmd_quotient)

    b = sub.add_parser("bench", parents=[common], help="benchmark sweep as CSV")
    b.add_argument("--sweep", choices=("n", "memory", "k"), default="n")
    b.add_argument("--values", nargs="+", required=True)
    b.add_argument("--shape", choices=SHAPES + ("xml",), default="dag_geometric")
    b.add_argument("--n", type=lambda s: int(float(s)), default=100_000)
    b.add_argument("--variant", choices=("rank-label", "rank-label-hash"), default="rank-label")
    b.add_argument("--k", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    cv = sub.add_parser("convert", parents=[common], help="convert between text and binary files")
    cv.add_argument("kind", choices=("nodes", "edges", "partition"))
    cv.add_argument("src")
    cv.add_argument("dst")
    cv.add_argument("--to", choices=("bin", "text"), required=True)
    cv.add_argument("--labels", default=None, help="label table CSV for node labels")
    cv.set_defaults(func=cmd_convert)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FormatError, XmlParseError, CoverageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (StorageError, OSError) as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return EXIT_STORAGE


if __name__ == "__main__":
    sys.exit(main())
