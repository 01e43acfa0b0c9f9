import argparse
import json

from ..data.checkpoint import read_container


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("path", help="checkpoint or dataset export")
    parser.add_argument("--values", action="store_true", help="print every value, not just summaries")


def dump(path: str, values: bool = False) -> str:
    header, tensors = read_container(path)

    lines = [json.dumps(header, indent=2, sort_keys=True)]
    for name, tensor in tensors.items():
        shape = "x".join(str(d) for d in tensor.shape) or "scalar"
        if tensor.numel():
            summary = f"min {tensor.min().item():.6g} max {tensor.max().item():.6g} sum {tensor.sum().item():.17g}"
        else:
            summary = "empty"
        lines.append(f"{name}  [{shape}]  {summary}")
        if values:
            lines.extend(repr(v) for v in tensor.reshape(-1).tolist())

    return "\n".join(lines) + "\n"


def run_dump_checkpoint(args: argparse.Namespace) -> int:
    """Print a container's header and one summary line per tensor, in a stable diffable form."""
    print(dump(args.path, args.values), end="")
    return 0
