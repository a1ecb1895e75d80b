#!/usr/bin/env python3
# cli.py
# Командная строка: генерация данных, обучение, свипы, сравнение, инференс, маска, бенчмарк

import argparse
import csv
import logging
import os
import sys
from collections import Counter
from dataclasses import replace
from typing import List, Optional

import numpy as np

# Добавляем путь к модулям проекта
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from bench import run_bench
from config import get_log_level, get_model_path, get_workers
from dataset_io import iter_dataset, read_dataset, write_dataset
from errors import BeatNoteError, ConfigError
from estimators import estimate_batch, make_estimator
from evaluation import APPENDIX_PRESETS, SweepConfig, SweepReport, appendix_preset, compare, sweep
from mask import MaskConfig, MaskStream, Segment, make_scenario
from model_io import load_model, save_model
from nn_core import FREQ_SPAN_HZ
from rng_utils import STREAM_VALIDATION, make_rng
from signal_gen import (
    GINGERINO_FREQUENCY_HZ,
    GP2_FREQUENCY_HZ,
    colatitude_rad,
    generate_dataset,
    noise_asd,
    sagnac_frequency,
    sample_params,
    white_noise_asd_level,
)
from single_tone import Method, frequency_resolution
from trainer import NOISE_PRESETS, TrainConfig, ranges_for_preset, train, validation_frequency_mse

logger = logging.getLogger("cli")

EARTH_ROTATION_RAD_S = 7.292115e-5
HE_NE_WAVELENGTH_M = 632.8e-9
DEFAULT_SEGMENTS = "good:1200,shift:50,good:200,split:100,good:200"


def setup_logging(verbose: bool, quiet: bool) -> None:
    """Настраивает корневой логгер (stderr); уровень из флагов или BEATNOTE_LOG_LEVEL."""
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    else:
        level = getattr(logging, get_log_level(), logging.INFO)
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)


def parse_grid(value: str):
    """Разбирает сетку 'f0:f1:step'."""
    parts = value.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"Сетка задается как f0:f1:step, получено {value!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"Некорректные числа в сетке {value!r}")


def parse_segments(value: str) -> List[Segment]:
    """Разбирает сценарий 'good:1200,shift:50,split:100'."""
    segments = []
    for chunk in value.split(","):
        kind, _, count = chunk.strip().partition(":")
        if kind not in ("good", "shift", "split") or not count.isdigit():
            raise argparse.ArgumentTypeError(f"Некорректный участок сценария {chunk!r}")
        segments.append(Segment(kind=kind, count=int(count)))
    return segments


def _model_from_args(args, parser: argparse.ArgumentParser):
    if Method.parse(args.method) is not Method.NEURAL_NET:
        return None
    path = args.model or get_model_path()
    if not path:
        parser.error("для метода nn нужен --model")
    return load_model(path)


def _ranges_from_args(args):
    overrides = {}
    if args.sample_rate is not None:
        overrides["sample_rate_hz"] = args.sample_rate
    if args.n_samples is not None:
        overrides["n_samples"] = args.n_samples
    return ranges_for_preset(args.noise, **overrides)


def cmd_gen(args, parser) -> int:
    ranges = _ranges_from_args(args)
    if args.f_min is not None or args.f_max is not None:
        lo, hi = ranges.frequency_hz
        ranges = replace(ranges, frequency_hz=(args.f_min if args.f_min is not None else lo,
                                               args.f_max if args.f_max is not None else hi))
    count = write_dataset(args.out, generate_dataset(args.n, ranges, args.seed))
    logger.info("Датасет: %d записей, n=%d, fs=%.1f Гц -> %s", count, ranges.n_samples, ranges.sample_rate_hz, args.out)
    bin_width, duration = frequency_resolution(ranges.n_samples, ranges.sample_rate_hz)
    logger.info("Окно %.1f мс, шаг БПФ %.1f Гц", duration * 1e3, bin_width)
    return 0


def cmd_train(args, parser) -> int:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {}
    for key in ("n_train", "n_val", "batch_size", "max_epochs", "lr", "patience"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.checkpoint:
        overrides["checkpoint_path"] = args.checkpoint
    config = replace(config, show_progress=not args.quiet, **overrides)
    if args.noise:
        config = TrainConfig.from_values({"noise": args.noise}, base=config)

    model, history = train(config)
    save_model(model, args.out)
    logger.info("Модель сохранена: %s (лучшая эпоха %d, val_loss=%.6g)",
                args.out, history.best_epoch, history.best_val_loss)
    freq_mse = validation_frequency_mse(model, config)
    logger.info("MSE частоты на валидации: %.3g (sigma около %.3g Гц)", freq_mse, FREQ_SPAN_HZ * freq_mse ** 0.5)
    if args.history:
        history.write_csv(args.history)
    return 0


def cmd_eval_sweep(args, parser) -> int:
    config = SweepConfig.from_file(args.config) if args.config else SweepConfig()
    if args.preset:
        config = appendix_preset(args.preset, config)
    overrides = {"show_progress": not args.quiet, "workers": args.workers or get_workers()}
    if args.method:
        overrides["estimator"] = args.method
    if args.grid:
        overrides["f_start"], overrides["f_stop"], overrides["f_step"] = args.grid
    if args.trials is not None:
        overrides["trials_per_freq"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.noise:
        overrides["noise"] = args.noise
    if args.sample_rate is not None:
        overrides["sample_rate_hz"] = args.sample_rate
    if args.n_samples is not None:
        overrides["n_samples"] = args.n_samples
    if args.bin_width is not None:
        overrides["bin_width_hz"] = args.bin_width
    config = replace(config, **overrides)

    args.method = config.estimator
    model = _model_from_args(args, parser)
    report = sweep(config, model=model, keep_estimates=bool(args.dump_estimates))
    report.write_csv(args.out)
    logger.info("Отчет свипа: %s (%d частот)", args.out, len(report.rows))
    if args.dump_estimates:
        report.dump_estimates(args.dump_estimates)
        logger.info("Сырые оценки: %s", args.dump_estimates)
    return 0


def cmd_compare(args, parser) -> int:
    table = compare(SweepReport.read_csv(args.a), SweepReport.read_csv(args.b))
    text = table.format()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)
    logger.info("sigma_a/sigma_b = %.3f, spread_a/spread_b = %.3f",
                table.mean_sigma_ratio, table.mean_spread_ratio)
    return 0


def _open_output(path: Optional[str]):
    if path:
        return open(path, "w", encoding="utf-8", newline="")
    return sys.stdout


def cmd_infer(args, parser) -> int:
    model = _model_from_args(args, parser)
    data = read_dataset(args.input)
    freqs, valid = estimate_batch(args.method, data.noisy, data.sample_rate_hz, model=model)
    dropped = int((~valid).sum())
    if dropped:
        logger.warning("%d записей без оценки", dropped)

    handle = _open_output(args.out)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["index", "estimate_hz", "true_hz"])
        for index, (freq, ok, truth) in enumerate(zip(freqs, valid, data.frequency_hz)):
            writer.writerow([index, repr(float(freq)) if ok else "nan", repr(float(truth))])
    finally:
        if handle is not sys.stdout:
            handle.close()
    return 0


def cmd_mask(args, parser) -> int:
    if (args.ref_mean is None) != (args.ref_sigma is None):
        parser.error("--ref-mean и --ref-sigma задаются вместе")
    model = _model_from_args(args, parser)
    estimator = make_estimator(args.method, model)
    cfg = MaskConfig(
        ref_mean_hz=args.ref_mean,
        ref_sigma_hz=args.ref_sigma,
        k_sigma=args.k_sigma,
        contrast_threshold=args.contrast_threshold,
        envelope_window=args.envelope_window,
        calibration_frames=args.calibration_frames,
    )
    stream = MaskStream(estimator, cfg)
    counts: Counter = Counter()

    handle = _open_output(args.out)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["frame_index", "label", "freq_hz", "contrast"])
        for record in iter_dataset(args.input):
            result = stream.push(record.noisy)
            counts[int(result.label)] += 1
            writer.writerow([result.frame_index, int(result.label), repr(result.freq_hz), repr(result.contrast)])
    finally:
        if handle is not sys.stdout:
            handle.close()

    logger.info("Маска: 0=%d 1=%d 2=%d, ошибок оценщика %d, превышений бюджета %d",
                counts[0], counts[1], counts[2], stream.failures, stream.over_budget)
    return 0


def cmd_scenario(args, parser) -> int:
    scenario = make_scenario(
        args.segments,
        ref_mean_hz=args.ref_mean,
        ref_sigma_hz=args.ref_sigma,
        n_samples=args.n_samples or 50,
        sample_rate_hz=args.sample_rate or 5000.0,
        noise_sigma=args.noise_sigma,
        freq_jitter_hz=args.jitter,
        seed=args.seed,
    )
    count = write_dataset(args.out, scenario.records())
    if args.labels:
        with open(args.labels, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["frame_index", "label", "freq_hz"])
            for index, (label, freq) in enumerate(zip(scenario.labels, scenario.frequencies_hz)):
                writer.writerow([index, int(label), repr(freq)])
    logger.info("Сценарий: %d кадров -> %s", count, args.out)
    return 0


def cmd_asd(args, parser) -> int:
    ranges = _ranges_from_args(args)
    rng = make_rng(args.seed, STREAM_VALIDATION)
    seeds = rng.integers(0, 2**63, size=args.n_windows, dtype=np.uint64)
    params = [sample_params(int(s), ranges) for s in seeds]
    freqs, asd = noise_asd(params)

    handle = _open_output(args.out)
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["frequency_hz", "asd"])
        for f, a in zip(freqs, asd):
            writer.writerow([repr(float(f)), repr(float(a))])
    finally:
        if handle is not sys.stdout:
            handle.close()

    sigma_lo, sigma_hi = ranges.sigma_amp
    logger.info("Уровень белого шума для sigma в [%.4f, %.4f]: [%.3g, %.3g] 1/sqrt(Гц)",
                sigma_lo, sigma_hi,
                white_noise_asd_level(sigma_lo, ranges.sample_rate_hz),
                white_noise_asd_level(sigma_hi, ranges.sample_rate_hz))
    return 0


def cmd_bench(args, parser) -> int:
    model = _model_from_args(args, parser)
    report = run_bench(args.method, n_windows=args.n_windows, model=model, seed=args.seed,
                       show_progress=not args.quiet)
    print(report.format())
    return 0


def cmd_sagnac(args, parser) -> int:
    theta = args.theta if args.theta is not None else colatitude_rad(args.latitude)
    freq = sagnac_frequency(
        omega=args.omega,
        area=args.side ** 2,
        perimeter=4.0 * args.side,
        wavelength=args.wavelength,
        theta=theta,
    )
    print(f"{freq:.3f}")
    logger.info("Рабочие точки: GINGERINO %.1f Гц, GP2 %.1f Гц", GINGERINO_FREQUENCY_HZ, GP2_FREQUENCY_HZ)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beatnote",
        description="Оценка частоты биений кольцевого лазерного гироскопа (ST и нейросеть)",
    )
    parser.add_argument("--verbose", action="store_true", help="Подробный лог (DEBUG)")
    parser.add_argument("--quiet", action="store_true", help="Только предупреждения, без прогресс-баров")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_signal_flags(p):
        p.add_argument("--noise", choices=NOISE_PRESETS, default=None, help="Пресет шума")
        p.add_argument("--sample-rate", type=float, default=None, help="Частота дискретизации, Гц")
        p.add_argument("--n-samples", type=int, default=None, help="Длина окна")

    def add_method_flags(p, default="st"):
        p.add_argument("--method", choices=[m.value for m in Method], default=default)
        p.add_argument("--model", default=None, help="Файл модели .bnmd")

    p = sub.add_parser("gen", help="Сгенерировать синтетический датасет BNDS")
    p.add_argument("--n", type=int, required=True, help="Количество записей")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--f-min", type=float, default=None)
    p.add_argument("--f-max", type=float, default=None)
    p.add_argument("--out", required=True)
    add_signal_flags(p)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train", help="Обучить сеть")
    p.add_argument("--config", default=None, help="Файл key=value")
    p.add_argument("--out", required=True, help="Файл модели .bnmd")
    p.add_argument("--history", default=None, help="CSV истории обучения")
    p.add_argument("--checkpoint", default=None, help="Чекпоинт при каждом улучшении")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--noise", choices=NOISE_PRESETS, default=None)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval-sweep", help="Свип Монте-Карло по сетке частот")
    p.add_argument("--config", default=None, help="Файл key=value")
    p.add_argument("--preset", choices=sorted(APPENDIX_PRESETS), default=None)
    p.add_argument("--grid", type=parse_grid, default=None, help="f0:f1:step")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--dump-estimates", default=None, help="Файл .npz для сырых оценок")
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--model", default=None, help="Файл модели .bnmd")
    add_signal_flags(p)
    p.set_defaults(handler=cmd_eval_sweep)

    p = sub.add_parser("compare", help="Сравнить два отчета свипа")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("infer", help="Оценить частоты записей датасета")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="CSV (по умолчанию stdout)")
    add_method_flags(p)
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("mask", help="Разметить кадры маской качества")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="CSV (по умолчанию stdout)")
    p.add_argument("--ref-mean", type=float, default=None)
    p.add_argument("--ref-sigma", type=float, default=None)
    p.add_argument("--k-sigma", type=float, default=2.0)
    p.add_argument("--contrast-threshold", type=float, default=0.5)
    p.add_argument("--envelope-window", type=int, default=50)
    p.add_argument("--calibration-frames", type=int, default=1000)
    add_method_flags(p)
    p.set_defaults(handler=cmd_mask)

    p = sub.add_parser("scenario", help="Синтетический поток кадров интенсивности для маски")
    p.add_argument("--segments", type=parse_segments, default=parse_segments(DEFAULT_SEGMENTS))
    p.add_argument("--ref-mean", type=float, default=GINGERINO_FREQUENCY_HZ)
    p.add_argument("--ref-sigma", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.002)
    p.add_argument("--jitter", type=float, default=0.0, help="Разброс частоты хороших кадров, Гц")
    p.add_argument("--sample-rate", type=float, default=None)
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labels", default=None, help="CSV с истинной разметкой")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_scenario)

    p = sub.add_parser("asd", help="Спектральная плотность шума синтетических окон")
    p.add_argument("--n-windows", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    add_signal_flags(p)
    p.set_defaults(handler=cmd_asd)

    p = sub.add_parser("bench", help="Задержка оценки одного окна")
    p.add_argument("--n-windows", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    add_method_flags(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("sagnac", help="Частота Саньяка квадратного резонатора")
    p.add_argument("--side", type=float, default=3.6, help="Сторона квадрата, м")
    p.add_argument("--wavelength", type=float, default=HE_NE_WAVELENGTH_M)
    p.add_argument("--omega", type=float, default=EARTH_ROTATION_RAD_S)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--theta", type=float, default=None, help="Угол к оси вращения, рад")
    group.add_argument("--latitude", type=float, default=90.0, help="Широта горизонтального кольца, град")
    p.set_defaults(handler=cmd_sagnac)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Главная функция: 0 - успех, 1 - ошибка выполнения, 2 - ошибка аргументов.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    if getattr(args, "noise", "unset") is None and args.command in ("gen", "asd"):
        args.noise = "default"

    try:
        return args.handler(args, parser)
    except ConfigError as e:
        logger.error("Ошибка конфигурации: %s", e)
        return 1
    except (BeatNoteError, OSError) as e:
        logger.error("Ошибка: %s", e)
        return 1
    except KeyboardInterrupt:
        logger.warning("Прервано пользователем")
        return 1


if __name__ == "__main__":
    sys.exit(main())
