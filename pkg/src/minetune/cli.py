"""Command-line client for the minetune service.

By default every command mounts the HTTP app in-process (no sockets, fully
deterministic); pass ``--server URL`` to target a running instance instead,
or use ``minetune serve`` to start one.

Exit codes: 0 success, 2 validation, 3 I/O, 4 nothing mined, 5 bad k,
1 anything else.
"""

import asyncio
import json
import os
import sys

# honor the thread-count env var before numpy gets imported anywhere
_threads = os.environ.get("MINETUNE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import click
import httpx

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NO_PAIRS = 4
EXIT_K_TOO_LARGE = 5

_CODE_EXITS = {
    "validation": EXIT_VALIDATION,
    "io": EXIT_IO,
    "no_pairs_mined": EXIT_NO_PAIRS,
    "k_too_large": EXIT_K_TOO_LARGE,
}


def _post(server, path, payload):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def _inproc():
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://minetune.local", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(_inproc())


def _fail(resp) -> None:
    """Print the server's error and exit with the mapped code."""
    try:
        body = resp.json()
        detail = body.get("detail", resp.text)
        code = body.get("code")
    except Exception:
        detail, code = resp.text, None
    click.echo(f"error: {detail}", err=True)
    if resp.status_code == 422:
        sys.exit(EXIT_VALIDATION)
    if code in _CODE_EXITS:
        sys.exit(_CODE_EXITS[code])
    if resp.status_code == 404:
        sys.exit(EXIT_IO)
    sys.exit(1)


def _request(server, path, payload):
    resp = _post(server, path, payload)
    if resp.status_code >= 400:
        _fail(resp)
    return resp.json()


def _load_config(path, seed=None, out=None, ablation=None, k=None, lam=None, cross_camera=None):
    """Read the run-config JSON and apply command-line overrides."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    except json.JSONDecodeError as exc:
        click.echo(f"error: {path}: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)
    if not isinstance(raw, dict):
        click.echo(f"error: {path}: config must be a JSON object", err=True)
        sys.exit(EXIT_VALIDATION)

    if seed is not None:
        from .config import derive_seeds

        vseed, rseed, tseed = derive_seeds(seed)
        raw.setdefault("train", {})["seed"] = tseed
        if isinstance(raw.get("generator"), dict):
            raw["generator"].setdefault("virtual", {})["seed"] = vseed
            raw["generator"].setdefault("real", {})["seed"] = rseed
    if out is not None:
        raw["output_dir"] = out
    if ablation is not None:
        raw["ablation"] = ablation
    if k is not None:
        raw.setdefault("train", {})["k"] = k
    if lam is not None:
        raw.setdefault("train", {})["lambda"] = lam
    if cross_camera is not None:
        raw.setdefault("train", {})["exclude_same_camera"] = cross_camera

    from pydantic import ValidationError

    from .config import RunConfig

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        click.echo(f"error: invalid config {path}:\n{exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _echo_json(data) -> None:
    click.echo(json.dumps(data, indent=2, sort_keys=True))


@click.group()
def main():
    """Mine cross-camera positive pairs and refine a metric embedder."""


_server_opt = click.option("--server", default=None, help="Remote service URL (default: in-process).")
_json_opt = click.option("--json", "as_json", is_flag=True, help="Print the raw response JSON.")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run-config JSON file.")
@click.option("--seed", type=int, default=None, help="Override all seeds from one base seed.")
@click.option("--out", default=None, help="Override the output directory.")
@_server_opt
@_json_opt
def generate(config_path, seed, out, server, as_json):
    """Write the virtual and real dataset files from the generator block."""
    cfg = _load_config(config_path, seed=seed, out=out)
    if cfg.generator is None:
        click.echo("error: config has no generator block", err=True)
        sys.exit(EXIT_VALIDATION)
    out_dir = cfg.output_dir or "."
    payload = {
        "virtual": cfg.generator.virtual.model_dump(mode="json"),
        "real": cfg.generator.real.model_dump(mode="json"),
        "out_dir": out_dir,
    }
    data = _request(server, "/generate", payload)
    if as_json:
        _echo_json(data)
        return
    for role in ("virtual", "real"):
        info = data.get(role)
        if info:
            click.echo(
                f"{role}: {info['path']}  items={info['items']} dim={info['dim']} "
                f"cameras={info['n_cameras']} sha256={info['sha256'][:12]}"
            )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Run-config JSON file.")
@click.option("--seed", type=int, default=None, help="Override all seeds from one base seed.")
@click.option("--out", default=None, help="Override the output directory.")
@click.option("--ablation", type=click.Choice(["cf", "random", "none"]), default=None)
@click.option("--k", type=int, default=None, help="Override the neighbor-list size.")
@click.option("--lambda", "lam", type=float, default=None, help="Override the triplet-loss weight.")
@click.option("--no-cross-camera", is_flag=True, help="Allow same-camera pairs during mining.")
@_server_opt
@_json_opt
def run(config_path, seed, out, ablation, k, lam, no_cross_camera, server, as_json):
    """Run the full pipeline: pretrain, mine, fine-tune, evaluate."""
    cfg = _load_config(
        config_path,
        seed=seed,
        out=out,
        ablation=ablation,
        k=k,
        lam=lam,
        cross_camera=False if no_cross_camera else None,
    )
    data = _request(server, "/run", {"config": cfg.model_dump(mode="json", by_alias=True)})
    if as_json:
        _echo_json(data)
        return
    report = data["report"]
    coarse = report["coarse"]
    click.echo(f"coarse: rank-1 {coarse['cmc']['1']:.4f}  mAP {coarse['mAP']:.4f}")
    if "final" in report:
        final = report["final"]
        click.echo(f"final:  rank-1 {final['cmc']['1']:.4f}  mAP {final['mAP']:.4f}")
    if "mining_accuracy" in report:
        click.echo(f"mining accuracy (last epoch): {report['mining_accuracy']:.4f}")
    if data.get("report_path"):
        click.echo(f"report: {data['report_path']}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(), help="Embedder checkpoint file.")
@click.option("--dataset", required=True, type=click.Path(), help="Binary dataset file.")
@click.option("--k", type=int, default=50, show_default=True)
@click.option("--no-cross-camera", is_flag=True, help="Allow same-camera pairs.")
@click.option("--out", default=None, help="Where to write the pairs CSV.")
@_server_opt
@_json_opt
def mine(checkpoint, dataset, k, no_cross_camera, out, server, as_json):
    """Mine positive pairs from a dataset with a trained embedder."""
    payload = {
        "checkpoint": checkpoint,
        "dataset": dataset,
        "k": k,
        "exclude_same_camera": not no_cross_camera,
        "out": out,
    }
    data = _request(server, "/mine", payload)
    if as_json:
        _echo_json(data)
        return
    click.echo(f"mined {data['count']} pairs, skipped {data['anchors_skipped']} anchors")
    if data.get("mining_accuracy") is not None:
        click.echo(f"mining accuracy: {data['mining_accuracy']:.4f}")
    if data.get("out_path"):
        click.echo(f"pairs: {data['out_path']}")


@main.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--dataset", required=True, type=click.Path())
@click.option("--ranks", default="1,5,10,20", show_default=True, help="Comma-separated CMC ranks.")
@click.option("--per-query-csv", default=None, help="Also dump per-query average precision.")
@_server_opt
@_json_opt
def eval_cmd(checkpoint, dataset, ranks, per_query_csv, server, as_json):
    """Evaluate a checkpoint on a dataset (CMC / mAP, cross-camera protocol)."""
    payload = {
        "checkpoint": checkpoint,
        "dataset": dataset,
        "ranks": [int(r) for r in ranks.split(",") if r.strip()],
        "per_query_csv": per_query_csv,
    }
    data = _request(server, "/eval", payload)
    if as_json:
        _echo_json(data)
        return
    if data.get("note"):
        click.echo(data["note"])
        return
    click.echo(f"mAP: {data['mAP']:.4f}")
    for r, v in sorted(data["cmc"].items(), key=lambda kv: int(kv[0])):
        click.echo(f"rank-{r}: {v:.4f}")
    click.echo(
        f"queries: {data['queries_evaluated']} evaluated, {data['queries_skipped']} skipped"
    )
    if data.get("per_query_csv"):
        click.echo(f"per-query AP: {data['per_query_csv']}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--param", required=True, type=click.Choice(["k", "lambda", "n_r", "n_p", "n_e"]))
@click.option("--values", required=True, help="Comma-separated parameter values.")
@click.option("--seed", type=int, default=None, help="Override all seeds from one base seed.")
@click.option("--out", default=None, help="Override the output directory.")
@_server_opt
@_json_opt
def sweep(config_path, param, values, seed, out, server, as_json):
    """Re-run the pipeline over a grid of one hyper-parameter."""
    cfg = _load_config(config_path, seed=seed, out=out)
    try:
        parsed = [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        click.echo(f"error: cannot parse values {values!r}", err=True)
        sys.exit(EXIT_VALIDATION)
    if not parsed:
        click.echo("error: no sweep values given", err=True)
        sys.exit(EXIT_VALIDATION)
    payload = {
        "config": cfg.model_dump(mode="json", by_alias=True),
        "param": param,
        "values": parsed,
    }
    data = _request(server, "/sweep", payload)
    if as_json:
        _echo_json(data)
        return
    for item in data["items"]:
        rank1 = "n/a" if item.get("rank1") is None else f"{item['rank1']:.4f}"
        m_ap = "n/a" if item.get("mAP") is None else f"{item['mAP']:.4f}"
        click.echo(f"{param}={item['value']:g}  rank-1 {rank1}  mAP {m_ap}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
