import copy
import functools
import logging
import sys
from pathlib import Path

import click
import pandas as pd

from bayesleak import __version__
from bayesleak.analytic import analytic_attack
from bayesleak.attacks import layer_drop_attack, run_attack
from bayesleak.config import (
    ConfigError,
    build_attack,
    build_dataset,
    build_defense,
    build_grid,
    build_matrix_attacks,
    build_matrix_defenses,
    build_network,
    build_prior,
    load_config,
    output_folder,
    training_examples,
)
from bayesleak.data import (
    ImageDataset,
    SyntheticTask,
    first_examples,
    load_csv_tensor,
    sample_synthetic,
)
from bayesleak.defenses import sample
from bayesleak.evaluation.ablations import (
    layer_drop_comparison,
    mc_ablation,
    synthetic_ablation,
)
from bayesleak.evaluation.grid import BETA_CALIBRATION_GRID, CalibrationCase, calibrate_beta
from bayesleak.evaluation.matrix import run_matrix
from bayesleak.evaluation.risk import (
    analytic_attacker,
    constant_attacker,
    estimate_risk_curve,
    optimization_attacker,
    trial_seeds,
)
from bayesleak.reporter import Reporter
from bayesleak.store import CheckpointStore
from bayesleak.workflows import TimingModule

# settings that change where or how fast a run happens, not what it produces
MANIFEST_EXCLUDED = ("output_folder", "jobs")


def create_logger(fp=None):
    logger = logging.getLogger("bayesleak")
    logger.setLevel(logging.DEBUG)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
    # console handler on standard error, result files stay free of log lines
    ch = logging.StreamHandler(sys.stderr)
    ch.setLevel(logging.INFO)
    ch.setFormatter(formatter)
    logger.addHandler(ch)
    if fp is not None:
        Path(fp).parent.mkdir(exist_ok=True, parents=True)
        fh = logging.FileHandler(fp)
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(formatter)
        logger.addHandler(fh)
    return logger


@click.group()
@click.version_option(__version__, message="bayesleak version: %(version)s")
@click.pass_context
def main(ctx):
    """Command line interface for bayesleak."""
    if ctx.obj is None:
        ctx.obj = {}


def click_run_options():
    def decorator(func):
        @click.option(
            "--config",
            "-c",
            default=None,
            type=click.Path(dir_okay=False),
            help="Path of the run configuration (YAML or JSON). Keys missing from the file take the packaged defaults.",
        )
        @click.option(
            "--out",
            default=None,
            type=click.Path(file_okay=False),
            help="Folder for the result files. Defaults to general.output_folder, $BAYESLEAK_OUTPUT_DIR or ./output, followed by the command name.",
        )
        @click.option("--seed", type=int, default=None, help="Master seed (general.seed).")
        @click.option(
            "--jobs",
            "-j",
            type=int,
            default=None,
            help="Worker processes for independent trials; 0 uses all available cores.",
        )
        @click.option("--log-file", default=None, help="Also write DEBUG logs to this file.")
        @click.option("--timing", is_flag=True, help="Log the time spent in each phase.")
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            return func(*args, **kwargs)

        return wrapper

    return decorator


def exit_codes(func):
    """Exit with 2 on configuration errors and 3 on any other failure."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except (ConfigError, click.UsageError) as error:
            click.echo(f"Configuration error: {error}", err=True)
            sys.exit(2)
        except (KeyboardInterrupt, SystemExit):
            raise
        except Exception as error:
            logging.getLogger("bayesleak").debug("run failed", exc_info=True)
            click.echo(f"Error: {type(error).__name__}: {error}", err=True)
            sys.exit(3)

    return wrapper


class Run:
    """State shared by the subcommands: merged configuration, logger, timer and the
    output folder."""

    def __init__(self, command, config, out, seed, jobs, log_file, timing, overrides=None):
        self.logger = create_logger(log_file)
        overrides = dict(overrides or {})
        overrides["general.seed"] = seed
        overrides["general.jobs"] = jobs
        self.config = load_config(config, overrides)
        self.command = command
        self.seed = int(self.config["general"]["seed"])
        self.jobs = self.config["general"]["jobs"]
        self.folder = Path(out) if out is not None else output_folder(self.config) / command
        self.timer = TimingModule(command) if timing else None

    def split(self, phase):
        if self.timer is not None:
            self.timer.new_split(phase)

    def manifest_config(self) -> dict:
        config = copy.deepcopy(self.config)
        for key in MANIFEST_EXCLUDED:
            config["general"].pop(key, None)
        return config

    def reporter(self) -> Reporter:
        return Reporter(self.folder, self.manifest_config(), self.seed, self.command)

    def finish(self, reporter: Reporter):
        reporter.report()
        self.split("report")
        if self.timer is not None:
            self.logger.info(str(self.timer))
        self.logger.info(f"results written to {self.folder}")


def image_shape(dataset):
    if isinstance(dataset, ImageDataset):
        return dataset.image_shape
    return None


def pick_example(dataset, index):
    if isinstance(dataset, SyntheticTask):
        return sample_synthetic(dataset, index)
    if not 0 <= index < len(dataset):
        raise ConfigError(f"attack.example_index {index} outside a dataset of {len(dataset)}")
    return dataset[index]


@main.command()
@click_run_options()
@click.option("--k", type=int, default=None, help="Monte Carlo samples per step.")
@click.option("--delta", type=float, default=None, help="Radius of the ball around the iterate.")
@click.option("--steps", type=int, default=None, help="Attack steps.")
@click.option("--lr", type=float, default=None, help="Step size.")
@click.option("--lr-decay", type=float, default=None, help="Exponential step size decay.")
@click.option("--beta", type=float, default=None, help="Weight of the prior.")
@click.option(
    "--init",
    type=click.Choice(["gaussian_noise", "zeros", "provided"]),
    default=None,
    help="Initial input.",
)
@click.option("--init-file", default=None, help="CSV with the initial input for --init provided.")
@click.option(
    "--conditional",
    type=click.Choice(["bayes", "l2", "l1", "cosine"]),
    default=None,
    help="Gradient term: the defense's own log-density or a matching loss.",
)
@click.option("--layer-mask", type=int, multiple=True, help="Layer left out of the objective (repeatable).")
@click.option("--layer-weighting", type=float, default=None, help="Layer weight decay gamma.")
@click.option("--optimizer", type=click.Choice(["adam", "ascent"]), default=None)
@click.option(
    "--joint-fallback/--no-joint-fallback",
    default=None,
    help="Optimise input and label together when the label is ambiguous.",
)
@click.option("--attack-seed", type=int, default=None, help="Seed of the attack (defaults to --seed).")
@click.option("--log-every", type=int, default=None, help="Log the objective every N steps.")
@click.option("--example-index", type=int, default=None, help="Example of the dataset to attack.")
@click.option("--layer-drop", is_flag=True, default=None, help="Leave the gradient of one layer out.")
@click.option("--drop-layer", type=int, default=None, help="Layer to drop; all layers are tried when omitted.")
@click.option(
    "--defense-kind",
    type=click.Choice(
        ["none", "gaussian", "laplacian", "prune_gaussian", "prune_laplacian", "clip_gaussian", "layer_perturb"]
    ),
    default=None,
    help="Defense applied to the true gradient; other defense flags start from an empty defense when the kind changes.",
)
@click.option("--sigma", type=float, default=None, help="Gaussian noise scale.")
@click.option("--b", type=float, default=None, help="Laplacian noise scale.")
@click.option("--prune-rate", type=float, default=None, help="Fraction of pruned gradient entries.")
@click.option("--clip-bound", type=float, default=None, help="Clipping norm.")
@click.option("--defended-layer", type=int, default=None, help="Layer perturbed by layer_perturb.")
@click.option("--perturb-mask-rate", type=float, default=None, help="Fraction of zeroed entries of the defended layer.")
@click.option(
    "--prior-kind",
    type=click.Choice(["uniform", "gaussian_unit", "laplacian_unit", "tv_aniso", "pixel_range", "tv_plus_range"]),
    default=None,
)
@click.option("--phi", type=float, default=None, help="Range weight of tv_plus_range.")
@click.option("--save-image", is_flag=True, help="Also write the reconstruction as CSV.")
@exit_codes
def attack(config, out, seed, jobs, log_file, timing, save_image, **flags):
    """Reconstruct one input from its (defended) gradient."""
    overrides = {
        "attack.k": flags["k"],
        "attack.delta": flags["delta"],
        "attack.steps": flags["steps"],
        "attack.lr": flags["lr"],
        "attack.lr_decay": flags["lr_decay"],
        "attack.beta": flags["beta"],
        "attack.init": flags["init"],
        "attack.init_file": flags["init_file"],
        "attack.conditional": flags["conditional"],
        "attack.layer_mask": list(flags["layer_mask"]) or None,
        "attack.layer_weighting": flags["layer_weighting"],
        "attack.optimizer": flags["optimizer"],
        "attack.joint_fallback": flags["joint_fallback"],
        "attack.seed": flags["attack_seed"],
        "attack.log_every": flags["log_every"],
        "attack.example_index": flags["example_index"],
        "attack.layer_drop": flags["layer_drop"] or None,
        "attack.defended_layer": flags["drop_layer"],
        "defense.kind": flags["defense_kind"],
        "defense.sigma": flags["sigma"],
        "defense.b": flags["b"],
        "defense.prune_rate": flags["prune_rate"],
        "defense.clip_bound": flags["clip_bound"],
        "defense.defended_layer": flags["defended_layer"],
        "defense.perturb_mask_rate": flags["perturb_mask_rate"],
        "prior.kind": flags["prior_kind"],
        "prior.phi": flags["phi"],
    }
    run = Run("attack", config, out, seed, jobs, log_file, timing, overrides)
    section = run.config["attack"]

    dataset = build_dataset(run.config)
    shape = image_shape(dataset)
    attack_config = build_attack(run.config, shape)
    defense = build_defense(run.config)
    x_init = None
    if attack_config.init == "provided":
        x_init = load_csv_tensor(section["init_file"], shape or (dataset.dim,))
    run.split("configuration")

    net = build_network(run.config, dataset)
    run.split("network")

    index = section["example_index"]
    example = pick_example(dataset, index)
    _, true_grad = net.loss_and_param_grad(example)
    released = sample(defense, true_grad, trial_seeds(run.seed, index)[1], net.segments)

    if defense.kind == "none" and attack_config.conditional == "bayes":
        run.logger.info("undefended gradient: analytic inversion")
        result = analytic_attack(released, net, x_orig=example.x)
    elif section["layer_drop"]:
        result = layer_drop_attack(
            attack_config, released, net, section["defended_layer"], x_orig=example.x
        )
    else:
        result = run_attack(
            attack_config,
            released,
            net,
            x_orig=example.x,
            x_init=None if x_init is None else x_init.data,
        )
    run.split("attack")
    run.logger.info(f"{result.method} attack: PSNR {result.psnr:.3f} dB, label {result.label}")

    reporter = run.reporter()
    reporter.json("result.json", result)
    if save_image:
        x_hat = result.x_hat if shape is None else result.x_hat.reshape(shape)
        reporter.tensor("reconstruction.csv", x_hat)
    run.finish(reporter)


def matrix_checkpoints(run, dataset) -> dict:
    section = run.config["matrix"]
    steps = sorted(set(int(s) for s in section["train_steps"]))
    if section["checkpoint_folder"] is not None:
        store = CheckpointStore(section["checkpoint_folder"])
        try:
            return {step: store.load(step) for step in steps}
        except FileNotFoundError as error:
            raise ConfigError(str(error)) from None
    net = build_network(run.config, dataset)
    if steps and steps[0] < net.step:
        raise ConfigError(f"matrix.train_steps {steps} start before the network's step {net.step}")
    examples = training_examples(run.config, dataset)
    checkpoints = {}
    for step in steps:
        net = net.train(examples, step - net.step, run.config["network"]["train_lr"])
        checkpoints[step] = net
    return checkpoints


@main.command()
@click_run_options()
@click.option("--preset", default=None, help="Grid preset (matrix.preset).")
@click.option("--n", type=int, default=None, help="Examples per cell (matrix.n).")
@exit_codes
def matrix(config, out, seed, jobs, log_file, timing, preset, n):
    """Best-over-grid mean PSNR of every attack against every defense."""
    run = Run(
        "matrix", config, out, seed, jobs, log_file, timing,
        {"matrix.preset": preset, "matrix.n": n},
    )
    dataset = build_dataset(run.config)
    grid = build_grid(run.config)
    attacks = build_matrix_attacks(run.config, image_shape(dataset))
    defenses = build_matrix_defenses(run.config)
    checkpoints = matrix_checkpoints(run, dataset)
    run.split("networks")

    table, records = run_matrix(
        grid,
        attacks,
        defenses,
        checkpoints,
        dataset,
        run.config["matrix"]["n"],
        seed=run.seed,
        jobs=run.jobs,
        dataset_name=run.config["data"]["source"],
    )
    run.split("matrix")

    reporter = run.reporter()
    reporter.csv("results.csv", table.to_frame())
    reporter.json("results.json", table.to_records())
    reporter.jsonl("runs.jsonl", records)
    run.finish(reporter)


@main.command("synth-ablation")
@click_run_options()
@click.option("--trials", type=int, default=None)
@click.option("--steps", type=int, default=None)
@exit_codes
def synth_ablation(config, out, seed, jobs, log_file, timing, trials, steps):
    """Distance traces of the four prior x conditional attacks on synthetic data."""
    run = Run(
        "synth-ablation", config, out, seed, jobs, log_file, timing,
        {"synthetic_ablation.trials": trials, "synthetic_ablation.steps": steps},
    )
    section = run.config["synthetic_ablation"]
    task = run.config["data"]["synthetic"]
    summaries = synthetic_ablation(
        seed=run.seed,
        steps=section["steps"],
        trials=section["trials"],
        b=section["b"],
        dim=task["dim"],
        classes=task["classes"],
        hidden=section["hidden"],
        weight_scale=section["weight_scale"],
        lr=section["lr"],
        lr_decay=section["lr_decay"],
        jobs=run.jobs,
    )
    run.split("ablation")

    reporter = run.reporter()
    for name, summary in summaries.items():
        reporter.csv(f"trace_{name.replace('+', '_')}.csv", summary.to_frame("distance"))
    reporter.json(
        "summary.json",
        {
            name: {"final_mean": s.final_mean, "final_stderr": s.final_stderr, "trials": s.traces.shape[0]}
            for name, s in summaries.items()
        },
    )
    run.finish(reporter)


@main.command("mc-ablation")
@click_run_options()
@click.option("--k", "k_values", type=int, multiple=True, help="Monte Carlo sample counts (repeatable).")
@click.option("--trials", type=int, default=None)
@click.option("--steps", type=int, default=None)
@exit_codes
def mc_ablation_command(config, out, seed, jobs, log_file, timing, k_values, trials, steps):
    """PSNR traces for several numbers of Monte Carlo samples."""
    run = Run(
        "mc-ablation", config, out, seed, jobs, log_file, timing,
        {
            "mc_ablation.k_values": list(k_values) or None,
            "mc_ablation.trials": trials,
            "mc_ablation.steps": steps,
        },
    )
    section = run.config["mc_ablation"]
    data = dict(run.config["data"], image_shape=section["image_shape"])
    dataset = build_dataset(dict(run.config, data=data))
    if not isinstance(dataset, ImageDataset):
        raise ConfigError("mc-ablation needs image data (data.source digits or idx)")
    run.split("data")
    try:
        summaries = mc_ablation(
            k_values=section["k_values"],
            trials=section["trials"],
            delta=section["delta"],
            sigma=section["sigma"],
            steps=section["steps"],
            seed=run.seed,
            dataset=dataset,
            lr=section["lr"],
            lr_decay=section["lr_decay"],
            hidden=section["hidden"],
            jobs=run.jobs,
        )
    except ValueError as error:
        raise ConfigError(str(error)) from None
    run.split("ablation")

    reporter = run.reporter()
    for k, summary in summaries.items():
        reporter.csv(f"psnr_k{k}.csv", summary.to_frame("psnr"))
    reporter.json(
        "summary.json",
        {
            str(k): {"final_mean": s.final_mean, "final_stderr": s.final_stderr, "trials": s.traces.shape[0]}
            for k, s in summaries.items()
        },
    )
    run.finish(reporter)


@main.command("layer-drop-ablation")
@click_run_options()
@click.option("--trials", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--defended-layer", type=int, default=None, help="Layer whose gradient the defense perturbs.")
@exit_codes
def layer_drop_ablation_command(config, out, seed, jobs, log_file, timing, trials, steps, defended_layer):
    """PSNR of the layer-drop attack against the unmasked attack, with the layer sweep."""
    run = Run(
        "layer-drop-ablation", config, out, seed, jobs, log_file, timing,
        {
            "layer_drop_ablation.trials": trials,
            "layer_drop_ablation.steps": steps,
            "layer_drop_ablation.defended_layer": defended_layer,
        },
    )
    section = run.config["layer_drop_ablation"]
    dataset = build_dataset(run.config)
    if not isinstance(dataset, ImageDataset):
        raise ConfigError("layer-drop-ablation needs image data (data.source digits or idx)")
    run.split("data")
    try:
        comparison = layer_drop_comparison(
            trials=section["trials"],
            seed=run.seed,
            dataset=dataset,
            hidden=section["hidden"],
            defended_layer=section["defended_layer"],
            perturb_mask_rate=section["perturb_mask_rate"],
            conditional=section["conditional"],
            steps=section["steps"],
            lr=section["lr"],
            lr_decay=section["lr_decay"],
            jobs=run.jobs,
        )
    except ValueError as error:
        raise ConfigError(str(error)) from None
    run.split("ablation")

    reporter = run.reporter()
    reporter.csv("trials.csv", comparison.to_frame())
    reporter.json(
        "summary.json",
        {
            "defended_layer": comparison.defended_layer,
            "mean_gain": comparison.mean_gain,
            "hit_rate": comparison.hit_rate,
            "trials": int(comparison.drop_psnr.size),
        },
    )
    run.finish(reporter)


@main.command()
@click_run_options()
@click.option(
    "--attacker",
    type=click.Choice(["analytic", "optimization", "constant"]),
    default=None,
    help="Attacker whose risk is estimated (risk.attacker).",
)
@click.option("--trials", type=int, default=None)
@click.option("--delta", "deltas", type=float, multiple=True, help="Radius (repeatable).")
@exit_codes
def risk(config, out, seed, jobs, log_file, timing, attacker, trials, deltas):
    """Monte Carlo estimate of the probability of missing the input by more than delta."""
    run = Run(
        "risk", config, out, seed, jobs, log_file, timing,
        {"risk.attacker": attacker, "risk.trials": trials, "risk.deltas": list(deltas) or None},
    )
    section = run.config["risk"]
    dataset = build_dataset(run.config)
    defense = build_defense(run.config)
    if section["attacker"] == "analytic":
        chosen = analytic_attacker()
    elif section["attacker"] == "constant":
        chosen = constant_attacker(section["constant_value"])
    else:
        attack_config = build_attack(run.config, image_shape(dataset))
        if attack_config.conditional == "bayes" and defense.kind == "none":
            raise ConfigError("the bayes conditional is degenerate without a defense, use the analytic attacker")
        chosen = optimization_attacker(attack_config)
    net = build_network(run.config, dataset)
    run.split("network")

    estimates = estimate_risk_curve(
        chosen, defense, net, dataset, section["deltas"], section["trials"], run.seed, run.jobs
    )
    run.split("risk")
    for estimate in estimates:
        run.logger.info(f"delta={estimate.delta:g}: risk {estimate.risk:.3f} +- {estimate.stderr:.3f}")

    reporter = run.reporter()
    reporter.json("risk.json", [estimate.to_dict() for estimate in estimates])
    reporter.csv("risk.csv", pd.DataFrame([estimate.to_dict() for estimate in estimates]))
    run.finish(reporter)


@main.command("calibrate-beta")
@click_run_options()
@click.option("--examples", type=int, default=None, help="Examples the sweep is scored on.")
@exit_codes
def calibrate_beta_command(config, out, seed, jobs, log_file, timing, examples):
    """Sweep the prior weight over decades and report the best one."""
    run = Run(
        "calibrate-beta", config, out, seed, jobs, log_file, timing,
        {"calibrate_beta.examples": examples},
    )
    dataset = build_dataset(run.config)
    template = build_attack(run.config, image_shape(dataset))
    defense = build_defense(run.config)
    if template.conditional == "bayes" and defense.kind == "none":
        raise ConfigError("the bayes conditional is degenerate without a defense")
    net = build_network(run.config, dataset)
    run.split("network")

    cases = []
    for i, example in enumerate(first_examples(dataset, run.config["calibrate_beta"]["examples"])):
        _, true_grad = net.loss_and_param_grad(example)
        released = sample(defense, true_grad, trial_seeds(run.seed, i)[1], net.segments)
        cases.append(CalibrationCase(released, net, example.x))
    if not cases:
        raise ConfigError("calibrate_beta.examples must be >= 1")
    beta_star, beta_range = calibrate_beta(template, cases, jobs=run.jobs)
    run.split("calibration")
    run.logger.info(f"beta* = {beta_star:g}")

    reporter = run.reporter()
    reporter.json(
        "beta.json",
        {
            "beta_star": beta_star,
            "search_range": list(beta_range),
            "grid": list(BETA_CALIBRATION_GRID),
            "prior": build_prior(run.config, image_shape(dataset)),
            "examples": len(cases),
        },
    )
    run.finish(reporter)


@main.command()
@click_run_options()
@click.option("--steps", type=int, default=None, help="SGD steps (network.train_steps).")
@exit_codes
def train(config, out, seed, jobs, log_file, timing, steps):
    """Train the network and write checkpoints before and after training."""
    run = Run("train", config, out, seed, jobs, log_file, timing, {"network.train_steps": steps})
    dataset = build_dataset(run.config)
    n_steps = run.config["network"]["train_steps"]
    if n_steps < 0:
        raise ConfigError("network.train_steps must be >= 0")
    start = build_network({**run.config, "network": {**run.config["network"], "train_steps": 0}}, dataset)
    run.split("configuration")
    trained = start.train(
        training_examples(run.config, dataset), n_steps, run.config["network"]["train_lr"]
    )
    run.split("training")

    reporter = run.reporter()
    store = CheckpointStore(run.folder)
    for net in (start, trained) if n_steps else (start,):
        reporter.file(store.file(net.step).name)
        store.save(net)
    run.finish(reporter)


if __name__ == "__main__":
    main()
