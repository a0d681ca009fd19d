// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fairkd/error.hpp"

namespace fairkd {
namespace {

std::string fixed1(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(x));
  std::string s = buf;
  if (s == "-0.0") s = "0.0";
  return s;
}

}  // namespace

ReportFormat parse_report_format(std::string_view name) {
  if (name == "tsv") return ReportFormat::kTsv;
  if (name == "md" || name == "markdown") return ReportFormat::kMarkdown;
  throw ConfigError("unknown report format '" + std::string(name) + "' (expected tsv|md)");
}

double round1(double x) {
  // The nudge keeps values such as 0.25 * 100 from falling just below the tie.
  const double scaled = x * 10.0;
  const double r = std::round(scaled + std::copysign(1e-9, scaled));
  return r / 10.0;
}

std::string signed1(double x) {
  const double r = round1(x);
  if (r == 0.0) return "+0.0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.1f", r);
  return buf;
}

std::string human_tokens(std::uint64_t tokens) {
  const char* suffix = "";
  double v = static_cast<double>(tokens);
  if (tokens >= 1'000'000'000ULL) {
    v /= 1e9;
    suffix = "B";
  } else if (tokens >= 1'000'000ULL) {
    v /= 1e6;
    suffix = "M";
  } else if (tokens >= 1'000ULL) {
    v /= 1e3;
    suffix = "K";
  } else {
    return std::to_string(tokens);
  }
  return fixed1(v) + suffix;
}

std::vector<RenderedRow> render_rows(const std::vector<std::string>& tasks,
                                     const std::vector<ReportRow>& rows) {
  if (tasks.empty()) throw ValueError("report: no tasks");
  std::size_t scratch_rows = 0;
  for (const auto& r : rows) scratch_rows += r.strategy == "scratch" ? 1 : 0;
  if (scratch_rows != 1) {
    throw ValueError("report: expected exactly one scratch row, found " + std::to_string(scratch_rows));
  }
  std::vector<RenderedRow> out;
  double scratch_avg = 0.0;
  for (const auto& r : rows) {
    if (r.task_metrics.size() != tasks.size()) {
      throw ValueError("report: row '" + r.strategy + "' has " + std::to_string(r.task_metrics.size()) +
                       " metrics for " + std::to_string(tasks.size()) + " tasks");
    }
    RenderedRow rr;
    rr.strategy = r.strategy;
    rr.tokens = r.tokens;
    double total = 0.0;
    for (double m : r.task_metrics) {
      if (!std::isfinite(m)) throw ValueError("report: row '" + r.strategy + "' has a non-finite metric");
      rr.task_percent.push_back(round1(100.0 * m));
      total += rr.task_percent.back();
    }
    rr.avg = round1(total / static_cast<double>(tasks.size()));
    if (r.strategy == "scratch") scratch_avg = rr.avg;
    out.push_back(std::move(rr));
  }
  for (auto& rr : out) {
    rr.has_delta = rr.strategy != "scratch";
    if (rr.has_delta) rr.delta = round1(rr.avg - scratch_avg);
  }
  return out;
}

std::string emit_report(const std::vector<std::string>& tasks, const std::vector<ReportRow>& rows,
                        ReportFormat format, const std::vector<std::string>& notes) {
  const auto rendered = render_rows(tasks, rows);
  std::vector<std::string> header = {"Strategy", "Tokens"};
  header.insert(header.end(), tasks.begin(), tasks.end());
  header.push_back("Avg");
  header.push_back(format == ReportFormat::kMarkdown ? "Δ" : "Delta");
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rendered) {
    std::vector<std::string> line = {
        r.strategy, format == ReportFormat::kMarkdown ? human_tokens(r.tokens) : std::to_string(r.tokens)};
    for (double p : r.task_percent) line.push_back(fixed1(p));
    line.push_back(fixed1(r.avg));
    line.push_back(r.has_delta ? signed1(r.delta) : "--");
    cells.push_back(std::move(line));
  }

  std::ostringstream o;
  if (format == ReportFormat::kTsv) {
    for (std::size_t i = 0; i < header.size(); ++i) o << (i ? "\t" : "") << header[i];
    o << '\n';
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) o << (i ? "\t" : "") << line[i];
      o << '\n';
    }
    for (const auto& n : notes) o << "# " << n << '\n';
  } else {
    o << "|";
    for (const auto& h : header) o << ' ' << h << " |";
    o << "\n|";
    for (std::size_t i = 0; i < header.size(); ++i) o << (i == 0 ? " :--- |" : " ---: |");
    o << '\n';
    for (const auto& line : cells) {
      o << "|";
      for (const auto& c : line) o << ' ' << c << " |";
      o << '\n';
    }
    if (!notes.empty()) {
      o << '\n';
      for (const auto& n : notes) o << "- " << n << '\n';
    }
  }
  return o.str();
}

}  // namespace fairkd
