import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest

from spiforecast.ingest import IndicatorKey, PanelDataset, write_panel_csv


def make_panel(values, country="BHR", start=2010, codes=None, target=None):
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    codes = codes or [f"IND.{j}" for j in range(p)]
    keys = [IndicatorKey(c, f"indicator {c}") for c in codes]
    return PanelDataset(country, range(start, start + n), keys, values, target=target,
                        country_name="Bahrain")


def linear_mcar(seed, n=40, p=6, missing=0.2):
    """Columns driven by two latent factors; returns (panel with holes, truth, holes)."""
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, 2))
    truth = latent @ rng.uniform(-2, 2, (2, p)) + 0.1 * rng.standard_normal((n, p)) + 10
    holes = rng.random((n, p)) < missing
    holes[0] = False  # keep every column observed somewhere
    return make_panel(np.where(holes, np.nan, truth)), truth, holes


@pytest.fixture
def panel_csv(tmp_path):
    """Two BHR indicators plus one QAT indicator over 2010-2023."""
    years = list(range(2010, 2024))
    lines = ["Country Name,Country Code,Indicator Name,Indicator Code," + ",".join(map(str, years))]
    a = [f"{1.0 + 0.1 * i:.1f}" for i in range(14)]
    b = ["" if i in (3, 7) else str(100 + i) for i in range(14)]
    lines.append("Bahrain,BHR,Access to electricity (%),EG.ELC.ACCS.ZS," + ",".join(a))
    lines.append('Bahrain,BHR,"GDP per capita, PPP",NY.GDP.PCAP.PP.CD,' + ",".join(b))
    lines.append("Qatar,QAT,Access to electricity (%),EG.ELC.ACCS.ZS," + ",".join(a))
    path = tmp_path / "wdi.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class StubApi:
    """In-process indicators API serving ``{code: {year: value}}`` in pages."""

    def __init__(self, data, per_page=5, envelope=True, fail_first=0, truncate=None, country="BHR",
                 names=None):
        self.data = data
        self.per_page = per_page
        self.envelope = envelope
        self.fail_first = fail_first
        self.truncate = truncate
        self.country = country
        self.names = names or {}
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *a):
                pass

            def do_GET(self):
                stub.requests.append(self.path)
                if stub.fail_first > 0:
                    stub.fail_first -= 1
                    self.send_response(503)
                    self.end_headers()
                    return
                url = urlparse(self.path)
                parts = url.path.strip("/").split("/")
                code = parts[-1]
                q = parse_qs(url.query)
                page = int(q.get("page", ["1"])[0])
                if code not in stub.data:
                    body = [{"message": [{"id": "120", "key": "Invalid value"}]}]
                else:
                    recs = [{"indicator": {"id": code, "value": stub.names.get(code, "")},
                             "country": {"id": stub.country, "value": "Bahrain"},
                             "date": str(y), "value": v}
                            for y, v in sorted(stub.data[code].items(), reverse=True)]
                    total = len(recs)
                    if stub.truncate is not None:
                        recs = recs[: stub.truncate]
                    chunk = recs[(page - 1) * stub.per_page: page * stub.per_page]
                    pages = max(1, -(-total // stub.per_page))
                    meta = {"page": page, "pages": pages, "per_page": stub.per_page, "total": total}
                    body = [meta, chunk or None] if stub.envelope else chunk
                raw = json.dumps(body).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v2"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def write_panel(tmp_path):
    def _write(ds, name="panel.csv"):
        path = tmp_path / name
        write_panel_csv(ds, path)
        return path
    return _write
