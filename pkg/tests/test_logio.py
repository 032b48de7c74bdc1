import numpy as np
import pytest

from conftest import make_request
from waterfall_abort.domain import AuctionLog
from waterfall_abort.logio import BASE_COLUMNS, CF_PAYOFF_COLUMN, LogParseError, read_log, write_log

HEADER = ",".join(BASE_COLUMNS)


def _write(tmp_path, lines, name="log.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _assert_same(a: AuctionLog, b: AuctionLog):
    assert list(a.records()) == list(b.records())


class TestRoundTrip:
    def test_simulated_log(self, tmp_path, small_log):
        path = tmp_path / "day1.csv"
        write_log(small_log, path)
        back = read_log(path)
        _assert_same(small_log, back)
        np.testing.assert_array_equal(back.cf_payoff, small_log.cf_payoff)
        write_log(back, tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()

    def test_observed_only_has_no_counterfactual_columns(self, tmp_path, small_log):
        path = tmp_path / "obs.csv"
        write_log(small_log.observed_only(), path)
        header = path.read_text().splitlines()[0].split(",")
        assert CF_PAYOFF_COLUMN not in header
        back = read_log(path)
        assert not back.has_counterfactual
        _assert_same(small_log.observed_only(), back)

    def test_mixed_context_kinds(self, tmp_path):
        records = [
            make_request("r1", context={"segment": "A", "score": 0.25}),
            make_request("r2", would_win=(False, False, False), median_bid=None,
                         context={"segment": None, "score": None}),
        ]
        log = AuctionLog.from_records(records)
        path = tmp_path / "ctx.csv"
        write_log(log, path)
        back = read_log(path)
        assert back.context["segment"].kind == "categorical"
        assert back.context["score"].kind == "numeric"
        _assert_same(log, back)

    def test_empty_log(self, tmp_path):
        path = _write(tmp_path, [HEADER])
        log = read_log(path)
        assert log.n_requests == 0 and log.n_rows == 0

    def test_floats_keep_full_precision(self, tmp_path):
        payoff = 0.1 + 0.2  # not representable in few digits
        log = AuctionLog.from_records([make_request(payoffs=[payoff] * 3, would_win=(True, False, False))])
        path = tmp_path / "p.csv"
        write_log(log, path)
        assert read_log(path).payoff[0] == payoff


class TestParseErrors:
    def test_bad_header(self, tmp_path):
        path = _write(tmp_path, ["request_id,publisher_id"])
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line == 1 and str(path) in str(err.value)

    def test_unparseable_number_names_the_line(self, tmp_path):
        path = _write(tmp_path, [
            HEADER,
            "r1,p,a,1,1,0.01,1,2,,1",
            "r2,p,a,1,0,0.0,x,2,,0",
        ])
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line == 3
        assert f"{path}:3:" in str(err.value)

    def test_bad_flag(self, tmp_path):
        path = _write(tmp_path, [HEADER, "r1,p,a,1,yes,0.01,1,1,,"])
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line == 2

    def test_invariant_violation_names_the_request_line(self, tmp_path):
        path = _write(tmp_path, [
            HEADER,
            "r1,p,a,1,1,0.01,1,2,,",
            "r2,p,a,1,1,0.02,2,2,,",
            "r2,p,b,2,0,0.02,2,2,,",
        ])
        with pytest.raises(LogParseError) as err:
            read_log(path)
        assert err.value.line == 3
        assert "last played" in str(err.value)

    def test_unknown_extra_column(self, tmp_path):
        path = _write(tmp_path, [HEADER + ",extra", "r1,p,a,1,1,0.01,1,1,,,z"])
        with pytest.raises(LogParseError, match="unexpected column"):
            read_log(path)
