#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cfl/experiment.h"

namespace cfl {

using nlohmann::json;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct Band {
  std::vector<double> t, mean, lo, hi;
};

// Seed mean/min/max of series[seed][t] over the t where every seed has a value.
Band Summarize(const std::vector<std::vector<std::optional<double>>>& series) {
  Band b;
  if (series.empty()) return b;
  std::size_t len = series.front().size();
  for (const auto& s : series) len = std::min(len, s.size());
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool ok = true;
    for (const auto& s : series) {
      if (!s[t]) {
        ok = false;
        break;
      }
      sum += *s[t];
      lo = std::min(lo, *s[t]);
      hi = std::max(hi, *s[t]);
    }
    if (!ok) continue;
    b.t.push_back(static_cast<double>(t + 1));
    b.mean.push_back(sum / static_cast<double>(series.size()));
    b.lo.push_back(lo);
    b.hi.push_back(hi);
  }
  return b;
}

std::string LineChart(const std::string& title, const std::string& ylabel,
                      const std::vector<std::string>& names, const std::vector<Band>& bands,
                      bool show_band_for_multi_seed, const std::vector<std::size_t>& seeds) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 170, kTop = 40, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  double tmax = 1.0, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
  for (const Band& b : bands) {
    for (std::size_t i = 0; i < b.t.size(); ++i) {
      tmax = std::max(tmax, b.t[i]);
      ymin = std::min(ymin, b.lo[i]);
      ymax = std::max(ymax, b.hi[i]);
    }
  }
  if (!std::isfinite(ymin)) ymin = 0.0, ymax = 100.0;
  ymin = std::min(0.0, std::floor(ymin / 10.0) * 10.0);
  ymax = std::max(ymin + 10.0, std::ceil(ymax / 10.0) * 10.0);
  const double tmin = 1.0;
  auto x = [&](double t) {
    return kLeft + (tmax > tmin ? (t - tmin) / (tmax - tmin) : 0.5) * pw;
  };
  auto y = [&](double v) { return kTop + (1.0 - (v - ymin) / (ymax - ymin)) * ph; };

  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
     << "<rect x=\"0\" y=\"0\" width=\"" << kW << "\" height=\"" << kH
     << "\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
     << Escape(title) << "</text>\n";
  os << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw
     << "\" y2=\"" << kTop + ph << "\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kTop + ph << "\"/>\n</g>\n";
  os << "<g class=\"ticks\" font-size=\"11\">\n";
  for (int t = 1; t <= static_cast<int>(tmax); ++t) {
    os << "<text x=\"" << Num(x(t)) << "\" y=\"" << kTop + ph + 16
       << "\" text-anchor=\"middle\">" << t << "</text>\n";
  }
  for (int k = 0; k <= 5; ++k) {
    const double v = ymin + (ymax - ymin) * k / 5.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << Num(y(v) + 4)
       << "\" text-anchor=\"end\">" << Num(v) << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 12
     << "\" text-anchor=\"middle\">task t</text>\n"
     << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << Escape(ylabel) << "</text>\n</g>\n";

  for (std::size_t m = 0; m < bands.size(); ++m) {
    const Band& b = bands[m];
    const char* color = kPalette[m % std::size(kPalette)];
    os << "<g class=\"series\" data-method=\"" << Escape(names[m]) << "\">\n";
    if (show_band_for_multi_seed && seeds[m] > 1 && !b.t.empty()) {
      os << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t i = 0; i < b.t.size(); ++i) os << Num(x(b.t[i])) << "," << Num(y(b.hi[i])) << " ";
      for (std::size_t i = b.t.size(); i-- > 0;) os << Num(x(b.t[i])) << "," << Num(y(b.lo[i])) << " ";
      os << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < b.t.size(); ++i) {
      os << (i ? " " : "") << Num(x(b.t[i])) << "," << Num(y(b.mean[i]));
    }
    os << "\"/>\n</g>\n";
  }
  os << "<g class=\"legend\" font-size=\"12\">\n";
  for (std::size_t m = 0; m < names.size(); ++m) {
    const double ly = kTop + 10 + 20.0 * static_cast<double>(m);
    os << "<g class=\"legend-entry\"><rect x=\"" << kLeft + pw + 14 << "\" y=\"" << ly - 9
       << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[m % std::size(kPalette)]
       << "\"/><text x=\"" << kLeft + pw + 32 << "\" y=\"" << ly + 1 << "\">"
       << Escape(names[m]) << "</text></g>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

std::string Chart(const std::vector<MethodSeries>& methods, bool forgetting) {
  std::vector<std::string> names;
  std::vector<Band> bands;
  std::vector<std::size_t> seeds;
  for (const MethodSeries& m : methods) {
    names.push_back(m.method);
    seeds.push_back(m.seeds.size());
    if (forgetting) {
      bands.push_back(Summarize(m.fgt));
    } else {
      std::vector<std::vector<std::optional<double>>> acc;
      for (const auto& s : m.acc) acc.emplace_back(s.begin(), s.end());
      bands.push_back(Summarize(acc));
    }
  }
  return forgetting ? LineChart("Average forgetting", "Fgt_t (%)", names, bands, true, seeds)
                    : LineChart("Average accuracy", "Acc_t (%)", names, bands, true, seeds);
}

double Mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double SampleStd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = Mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

std::vector<MethodSeries> LoadReports(const std::vector<std::filesystem::path>& paths) {
  std::vector<MethodSeries> out;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open report " + p.string());
    json doc;
    try {
      doc = json::parse(in);
      const std::string method = doc.at("method").get<std::string>();
      const std::string scenario = doc.at("scenario").get<std::string>();
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const MethodSeries& m) { return m.method == method; });
      if (it == out.end()) {
        out.push_back({method, scenario, {}, {}, {}});
        it = out.end() - 1;
      } else if (it->scenario != scenario) {
        throw std::runtime_error("method '" + method + "' appears with two scenarios");
      }
      for (const json& run : doc.at("runs")) {
        it->seeds.push_back(run.at("seed").get<std::uint64_t>());
        it->acc.push_back(run.at("acc").get<std::vector<double>>());
        std::vector<std::optional<double>> fgt;
        for (const json& f : run.at("fgt")) {
          fgt.push_back(f.is_null() ? std::nullopt : std::optional<double>(f.get<double>()));
        }
        if (fgt.size() != it->acc.back().size()) {
          throw std::runtime_error("acc and fgt series differ in length");
        }
        it->fgt.push_back(std::move(fgt));
      }
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed report " + p.string() + ": " + e.what());
    }
  }
  return out;
}

std::string AccuracySvg(const std::vector<MethodSeries>& methods) {
  return Chart(methods, false);
}

std::string ForgettingSvg(const std::vector<MethodSeries>& methods) {
  return Chart(methods, true);
}

PlotFiles EmitPlots(const std::vector<std::filesystem::path>& reports,
                    const std::filesystem::path& out_dir) {
  if (reports.empty()) throw std::runtime_error("plot needs at least one report");
  const auto methods = LoadReports(reports);
  std::filesystem::create_directories(out_dir);
  PlotFiles files{out_dir / "accuracy.svg", out_dir / "forgetting.svg"};
  std::ofstream(files.accuracy_svg, std::ios::binary) << AccuracySvg(methods);
  std::ofstream(files.forgetting_svg, std::ios::binary) << ForgettingSvg(methods);
  return files;
}

std::vector<CompareRow> CompareRuns(const std::vector<MethodSeries>& methods,
                                    const std::string& baseline) {
  if (methods.empty()) throw std::runtime_error("compare needs at least one report");
  for (const auto& m : methods) {
    if (m.scenario != methods.front().scenario) {
      throw std::runtime_error("scenario mismatch: '" + m.scenario + "' vs '" +
                               methods.front().scenario + "'");
    }
  }
  std::vector<CompareRow> rows;
  for (const MethodSeries& m : methods) {
    CompareRow row;
    row.method = m.method;
    row.seeds = m.seeds.size();
    std::vector<double> acc, fgt;
    for (std::size_t s = 0; s < m.acc.size(); ++s) {
      if (m.acc[s].empty()) continue;
      acc.push_back(m.acc[s].back());
      if (m.fgt[s].back()) fgt.push_back(*m.fgt[s].back());
    }
    if (acc.empty()) throw std::runtime_error("method '" + m.method + "' has no runs");
    row.acc_mean = Mean(acc);
    row.acc_std = SampleStd(acc);
    if (fgt.size() == acc.size()) {
      row.fgt_mean = Mean(fgt);
      row.fgt_std = SampleStd(fgt);
    }
    rows.push_back(row);
  }
  const auto base = std::find_if(rows.begin(), rows.end(),
                                 [&](const CompareRow& r) { return r.method == baseline; });
  if (base == rows.end()) throw std::runtime_error("baseline '" + baseline + "' not found");
  const CompareRow ref = *base;
  for (CompareRow& r : rows) {
    r.acc_delta = r.acc_mean - ref.acc_mean;
    if (r.fgt_mean && ref.fgt_mean) r.fgt_delta = *r.fgt_mean - *ref.fgt_mean;
  }
  return rows;
}

std::string CompareCsv(const std::vector<CompareRow>& rows) {
  auto opt = [](const std::optional<double>& v) { return v ? FormatDouble(*v) : ""; };
  std::string out = "method,seeds,acc_mean,acc_std,fgt_mean,fgt_std,acc_delta,fgt_delta\n";
  for (const CompareRow& r : rows) {
    out += r.method + "," + std::to_string(r.seeds) + "," + FormatDouble(r.acc_mean) + "," +
           FormatDouble(r.acc_std) + "," + opt(r.fgt_mean) + "," + opt(r.fgt_std) + "," +
           FormatDouble(r.acc_delta) + "," + opt(r.fgt_delta) + "\n";
  }
  return out;
}

std::string CompareTable(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %5s %18s %18s %9s %9s\n", "method", "seeds",
                "Acc_T", "Fgt_T", "dAcc", "dFgt");
  os << line;
  for (const CompareRow& r : rows) {
    char acc[48], fgt[48], dfgt[24];
    std::snprintf(acc, sizeof(acc), "%.2f +- %.2f", r.acc_mean, r.acc_std);
    if (r.fgt_mean) {
      std::snprintf(fgt, sizeof(fgt), "%.2f +- %.2f", *r.fgt_mean, *r.fgt_std);
    } else {
      std::snprintf(fgt, sizeof(fgt), "n/a");
    }
    if (r.fgt_delta) {
      std::snprintf(dfgt, sizeof(dfgt), "%+.2f", *r.fgt_delta);
    } else {
      std::snprintf(dfgt, sizeof(dfgt), "n/a");
    }
    std::snprintf(line, sizeof(line), "%-28s %5zu %18s %18s %+9.2f %9s\n", r.method.c_str(),
                  r.seeds, acc, fgt, r.acc_delta, dfgt);
    os << line;
  }
  return os.str();
}

}  // namespace cfl
