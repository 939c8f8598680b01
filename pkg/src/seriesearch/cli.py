"""Command-line client for the service.

Every subcommand is a thin wrapper that posts a request to the HTTP API.
By default the app runs in-process (no server needed); point ``--server``
or ``SERIESEARCH_SERVER`` at a running ``uvicorn seriesearch.service:app``
to drive a remote instance. Every flag can also be set through an
environment variable named ``SERIESEARCH_<COMMAND>_<FLAG>``.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 integrity error.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

_KIND_EXIT = {"usage": 1, "io": 2, "integrity": 3}


def _post(server: str | None, path: str, payload: dict) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def run():
        from .service import app

        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://seriesearch.local", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(run())


def _finish(response: httpx.Response) -> dict:
    if response.status_code == 422:
        click.echo(f"usage error: {response.text}", err=True)
        sys.exit(1)
    body = response.json()
    if response.is_error:
        kind = body.get("kind", "usage")
        click.echo(f"{kind} error: {body.get('error', response.text)}", err=True)
        sys.exit(_KIND_EXIT.get(kind, 1))
    return body


@click.group(context_settings={"auto_envvar_prefix": "SERIESEARCH"})
@click.option("--server", envvar="SERIESEARCH_SERVER", default=None,
              help="Base URL of a running service; default runs in-process.")
@click.pass_context
def cli(ctx, server):
    """Exact k-NN similarity search over fixed-length series."""
    ctx.obj = server


@cli.command()
@click.option("--count", type=int, required=True, help="Number of series.")
@click.option("--length", type=int, required=True, help="Points per series.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Output dataset file.")
@click.pass_obj
def generate(server, count, length, seed, out):
    """Generate a z-normalized random-walk dataset."""
    body = _finish(_post(server, "/datasets/generate", {
        "count": count, "length": length, "seed": seed, "out": out,
    }))
    click.echo(json.dumps(body))


@cli.command()
@click.option("--dataset", required=True)
@click.option("--length", type=int, required=True)
@click.option("--kind", type=click.Choice(["noise", "ood"]), required=True)
@click.option("--sigma2", type=float, default=None,
              help="Noise variance in [0.01, 0.1] (noise kind only).")
@click.option("--count", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, help="Output query file.")
@click.option("--reduced-dataset", default=None,
              help="Where to write the dataset minus held-out queries (ood).")
@click.pass_obj
def workload(server, dataset, length, kind, sigma2, count, seed, out,
             reduced_dataset):
    """Generate a query workload from a dataset."""
    body = _finish(_post(server, "/workloads/generate", {
        "dataset": dataset, "length": length, "kind": kind, "sigma2": sigma2,
        "count": count, "seed": seed, "out": out,
        "reduced_dataset": reduced_dataset,
    }))
    click.echo(json.dumps(body))


@cli.command()
@click.option("--dataset", required=True)
@click.option("--length", type=int, required=True)
@click.option("--leaf-size", type=int, default=1000, show_default=True)
@click.option("--buffer-mb", type=int, default=256, show_default=True)
@click.option("--dbsize", type=int, default=None,
              help="Series per read chunk; default scales 120K by dataset size.")
@click.option("--threads", type=int, default=4, show_default=True,
              help="Total build threads (1 reader + workers).")
@click.option("--flush-threshold", type=int, default=None,
              help="Full regions that trigger a flush; default half the workers.")
@click.option("--out", required=True, help="Index directory.")
@click.pass_obj
def index(server, dataset, length, leaf_size, buffer_mb, dbsize, threads,
          flush_threshold, out):
    """Build an index from a dataset and write it to disk."""
    body = _finish(_post(server, "/indexes/build", {
        "dataset": dataset, "length": length, "leaf_size": leaf_size,
        "buffer_mb": buffer_mb, "dbsize": dbsize, "threads": threads,
        "flush_threshold": flush_threshold, "out": out,
    }))
    click.echo(json.dumps(body))


@cli.command()
@click.option("--index", "index_dir", required=True)
@click.option("--queries", required=True, help="Query workload file.")
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--lmax", type=int, default=80, show_default=True)
@click.option("--eapca-th", type=float, default=0.25, show_default=True)
@click.option("--sax-th", type=float, default=0.50, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--metrics", "metrics_out", default=None,
              help="Also append one JSON metrics line per query to this file.")
@click.pass_obj
def query(server, index_dir, queries, k, lmax, eapca_th, sax_th, threads,
          metrics_out):
    """Run exact k-NN queries against an index."""
    body = _finish(_post(server, "/query", {
        "index": index_dir, "queries": queries, "k": k, "lmax": lmax,
        "eapca_th": eapca_th, "sax_th": sax_th, "threads": threads,
    }))
    lines = []
    for answer in body["answers"]:
        click.echo(json.dumps(answer))
        lines.append(json.dumps(answer["metrics"]))
    if metrics_out:
        with open(metrics_out, "a") as f:
            f.write("\n".join(lines) + "\n")


@cli.command()
@click.option("--dataset", required=True)
@click.option("--length", type=int, required=True)
@click.option("--queries", required=True)
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.pass_obj
def scan(server, dataset, length, queries, k, threads):
    """Parallel early-abandoning brute-force scan (the exactness baseline)."""
    body = _finish(_post(server, "/scan", {
        "dataset": dataset, "length": length, "queries": queries,
        "k": k, "threads": threads,
    }))
    for answer in body["answers"]:
        click.echo(json.dumps(answer))
    click.echo(json.dumps({"wall_time_s": body["wall_time_s"]}))


@cli.command()
@click.option("--index", "index_dir", required=True)
@click.option("--queries", required=True)
@click.option("--k", type=int, default=1, show_default=True)
@click.option("--lmax", type=int, default=80, show_default=True)
@click.option("--eapca-th", type=float, default=0.25, show_default=True)
@click.option("--sax-th", type=float, default=0.50, show_default=True)
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--include-answers", is_flag=True, default=False)
@click.pass_obj
def bench(server, index_dir, queries, k, lmax, eapca_th, sax_th, threads,
          include_answers):
    """Measure a workload: one JSON line per query, then the aggregate."""
    body = _finish(_post(server, "/bench", {
        "index": index_dir, "queries": queries, "k": k, "lmax": lmax,
        "eapca_th": eapca_th, "sax_th": sax_th, "threads": threads,
        "include_answers": include_answers,
    }))
    for record in body["per_query"]:
        click.echo(json.dumps({"type": "query", **record}))
    click.echo(json.dumps({"type": "aggregate", **body["aggregate"]}))


def main():
    cli()


if __name__ == "__main__":
    main()
