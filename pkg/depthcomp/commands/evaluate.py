"""
`eval`: score a directory of predicted depth PNGs against ground truth.
"""
import argparse
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from depthcomp.config import Settings
from depthcomp.models.schemas import MetricsReport
from depthcomp.services.imageio import MAX_ENCODABLE_DEPTH, read_depth_png16, write_depth_png16
from depthcomp.services.metrics import aggregate_metrics, compute_metrics, error_map, format_report, report_lines
from depthcomp.utils.errors import FormatError
from depthcomp.utils.logger import log_metrics


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="compute depth metrics over prediction/ground-truth directories")
    parser.add_argument("--pred-dir", type=Path, required=True, help="directory of predicted 16-bit depth PNGs")
    parser.add_argument("--gt-dir", type=Path, required=True, help="directory of ground-truth 16-bit depth PNGs")
    parser.add_argument("--min-depth-m", type=float, default=None, help="lower bound of the evaluation range (metres)")
    parser.add_argument("--max-depth-m", type=float, default=None, help="upper bound of the evaluation range (metres)")
    parser.add_argument("--error-dir", type=Path, default=None, help="write absolute-error PNGs here (metres x 256)")
    parser.set_defaults(handler=run)


def _evaluate_file(gt_path: Path, args: argparse.Namespace) -> MetricsReport:
    pred_path = args.pred_dir / gt_path.name
    if not pred_path.is_file():
        raise FormatError(f"no prediction for {gt_path.name} in {args.pred_dir}")
    gt = read_depth_png16(gt_path, MAX_ENCODABLE_DEPTH)
    pred = read_depth_png16(pred_path, MAX_ENCODABLE_DEPTH)
    if args.error_dir is not None:
        write_depth_png16(error_map(pred, gt), args.error_dir / gt_path.name)
    return compute_metrics(pred, gt, args.min_depth_m, args.max_depth_m)


def run(args: argparse.Namespace, settings: Settings) -> int:
    gt_files = sorted(args.gt_dir.glob("*.png"))
    if not gt_files:
        raise FormatError(f"no ground-truth PNGs in {args.gt_dir}")

    def evaluate(path: Path) -> MetricsReport:
        return _evaluate_file(path, args)

    with ThreadPoolExecutor(max_workers=settings.jobs) as pool:
        reports = list(pool.map(evaluate, gt_files))

    report = aggregate_metrics(reports)
    log_metrics(report)
    print(format_report(report))
    for line in report_lines(report):
        print(line)
    return 0
