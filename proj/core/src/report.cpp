#include "relaxseg/report.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string exact(double v) { return fmt("%.17g", v); }

std::string region_name(const std::vector<std::string>& names, int r) {
  return static_cast<std::size_t>(r) < names.size() ? names[static_cast<std::size_t>(r)] : "R" + std::to_string(r + 1);
}

double parse_double(const std::string& s, int line) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty())
    throw FormatError("csv line " + std::to_string(line) + ": bad number '" + s + "'", 0);
  return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

// Linear-interpolated quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv: return "csv";
    case ReportFormat::Markdown: return "md";
    case ReportFormat::Svg: return "svg";
  }
  return "csv";
}

std::vector<ReportFormat> parse_report_formats(const std::string& list) {
  std::vector<ReportFormat> out;
  for (const auto& item : split(list, ',')) {
    ReportFormat f;
    if (item == "csv") f = ReportFormat::Csv;
    else if (item == "md" || item == "markdown") f = ReportFormat::Markdown;
    else if (item == "svg") f = ReportFormat::Svg;
    else throw ConfigError("unknown report format '" + item + "' (expected csv, md, svg)");
    if (std::find(out.begin(), out.end(), f) == out.end()) out.push_back(f);
  }
  if (out.empty()) throw ConfigError("no report format given");
  return out;
}

std::string to_csv(const SweepResult& r) {
  std::string out = "combo_mask,region,dice,iou\n";
  for (const auto& row : r.rows)
    for (int k = 0; k < r.n_regions; ++k)
      out += std::to_string(row.combo.mask()) + "," + std::to_string(k) + "," +
             exact(row.dice[static_cast<std::size_t>(k)]) + "," + exact(row.iou[static_cast<std::size_t>(k)]) + "\n";
  for (int k = 0; k < r.n_regions; ++k)
    out += "mean," + std::to_string(k) + "," + exact(r.dice_mean[static_cast<std::size_t>(k)]) + "," +
           exact(r.iou_mean[static_cast<std::size_t>(k)]) + "\n";
  for (int k = 0; k < r.n_regions; ++k)
    out += "std," + std::to_string(k) + "," + exact(r.dice_std[static_cast<std::size_t>(k)]) + "," +
           exact(r.iou_std[static_cast<std::size_t>(k)]) + "\n";
  return out;
}

SweepResult parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "combo_mask,region,dice,iou")
    throw FormatError("csv: missing or wrong header", 0);
  std::map<std::uint32_t, std::map<int, std::pair<double, double>>> rows;
  std::map<int, std::pair<double, double>> mean, stdev;
  int n_regions = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 4) throw FormatError("csv line " + std::to_string(lineno) + ": expected 4 columns", 0);
    const int region = static_cast<int>(parse_double(cols[1], lineno));
    const std::pair<double, double> v{parse_double(cols[2], lineno), parse_double(cols[3], lineno)};
    n_regions = std::max(n_regions, region + 1);
    if (cols[0] == "mean") mean[region] = v;
    else if (cols[0] == "std") stdev[region] = v;
    else rows[static_cast<std::uint32_t>(parse_double(cols[0], lineno))][region] = v;
  }
  if (rows.empty()) throw FormatError("csv: no combination rows", 0);
  const auto max_mask = rows.rbegin()->first;
  const int m_total = std::bit_width(max_mask);
  if (rows.size() != ModalityCombination::full_mask(m_total))
    throw FormatError("csv: expected " + std::to_string(ModalityCombination::full_mask(m_total)) +
                          " combination rows, got " + std::to_string(rows.size()),
                      0);
  SweepResult r;
  r.m_total = m_total;
  r.n_regions = n_regions;
  for (const auto& [mask, regions] : rows) {
    if (static_cast<int>(regions.size()) != n_regions)
      throw FormatError("csv: combination " + std::to_string(mask) + " lacks some regions", 0);
    SweepRow row{ModalityCombination(mask, m_total), {}, {}};
    for (const auto& [k, v] : regions) {
      row.dice.push_back(v.first);
      row.iou.push_back(v.second);
    }
    r.rows.push_back(std::move(row));
  }
  if (static_cast<int>(mean.size()) != n_regions || static_cast<int>(stdev.size()) != n_regions)
    throw FormatError("csv: aggregate rows incomplete", 0);
  for (int k = 0; k < n_regions; ++k) {
    r.dice_mean.push_back(mean[k].first);
    r.iou_mean.push_back(mean[k].second);
    r.dice_std.push_back(stdev[k].first);
    r.iou_std.push_back(stdev[k].second);
  }
  return r;
}

std::vector<ModalityCombination> table_order(int m_total) {
  auto combos = enumerate_combinations(m_total);
  std::stable_sort(combos.begin(), combos.end(), [](const auto& a, const auto& b) {
    if (a.count() != b.count()) return a.count() < b.count();
    return a.mask() > b.mask();
  });
  return combos;
}

std::string to_markdown(const SweepResult& r, const std::vector<std::string>& region_names) {
  std::string out = "|";
  for (int m = 0; m < r.m_total; ++m) out += " M" + std::to_string(m + 1) + " |";
  for (int k = 0; k < r.n_regions; ++k) out += " " + region_name(region_names, k) + " Dice |";
  out += "\n|";
  for (int m = 0; m < r.m_total; ++m) out += ":-:|";
  for (int k = 0; k < r.n_regions; ++k) out += "--:|";
  out += "\n";
  for (const auto& combo : table_order(r.m_total)) {
    const auto it = std::find_if(r.rows.begin(), r.rows.end(), [&](const auto& row) { return row.combo == combo; });
    if (it == r.rows.end()) throw InvalidArgument("sweep result lacks combination " + combo.bits());
    out += "|";
    for (int m = 0; m < r.m_total; ++m) out += combo.present(m) ? " • |" : " ◦ |";
    for (int k = 0; k < r.n_regions; ++k) out += " " + fmt("%.2f", it->dice[static_cast<std::size_t>(k)]) + " |";
    out += "\n";
  }
  auto aggregate = [&](const std::string& label, const std::vector<double>& v) {
    out += "| " + label + " |";
    for (int m = 1; m < r.m_total; ++m) out += " |";
    for (int k = 0; k < r.n_regions; ++k) out += " " + fmt("%.2f", v[static_cast<std::size_t>(k)]) + " |";
    out += "\n";
  };
  aggregate("Average", r.dice_mean);
  aggregate("Std Dev", r.dice_std);
  return out;
}

std::string to_svg(const SweepResult& r, const std::vector<std::string>& region_names) {
  const double width = 120.0 * r.n_regions + 80.0, height = 320.0;
  const double top = 20.0, bottom = 280.0, left = 60.0;
  auto y = [&](double v) { return bottom - (std::clamp(v, 0.0, 100.0) / 100.0) * (bottom - top); };
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", width) + "\" height=\"" +
                    fmt("%.0f", height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out += "<line x1=\"" + fmt("%.1f", left) + "\" y1=\"" + fmt("%.1f", top) + "\" x2=\"" + fmt("%.1f", left) +
         "\" y2=\"" + fmt("%.1f", bottom) + "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 100; tick += 20)
    out += "<text x=\"" + fmt("%.1f", left - 8) + "\" y=\"" + fmt("%.1f", y(tick) + 4) +
           "\" text-anchor=\"end\">" + std::to_string(tick) + "</text>\n";
  for (int k = 0; k < r.n_regions; ++k) {
    std::vector<double> v;
    for (const auto& row : r.rows) v.push_back(row.dice[static_cast<std::size_t>(k)]);
    std::sort(v.begin(), v.end());
    const double cx = left + 60.0 + 120.0 * k;
    const double q1 = quantile(v, 0.25), med = quantile(v, 0.5), q3 = quantile(v, 0.75);
    const double mean = r.dice_mean[static_cast<std::size_t>(k)], sd = r.dice_std[static_cast<std::size_t>(k)];
    out += "<rect x=\"" + fmt("%.1f", cx - 25) + "\" y=\"" + fmt("%.2f", y(q3)) + "\" width=\"50\" height=\"" +
           fmt("%.2f", y(q1) - y(q3)) + "\" fill=\"#9ecae1\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + fmt("%.1f", cx - 25) + "\" y1=\"" + fmt("%.2f", y(med)) + "\" x2=\"" +
           fmt("%.1f", cx + 25) + "\" y2=\"" + fmt("%.2f", y(med)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    out += "<line x1=\"" + fmt("%.1f", cx) + "\" y1=\"" + fmt("%.2f", y(mean + sd)) + "\" x2=\"" + fmt("%.1f", cx) +
           "\" y2=\"" + fmt("%.2f", y(mean - sd)) + "\" stroke=\"#d62728\"/>\n";
    for (double w : {mean + sd, mean - sd})
      out += "<line x1=\"" + fmt("%.1f", cx - 10) + "\" y1=\"" + fmt("%.2f", y(w)) + "\" x2=\"" +
             fmt("%.1f", cx + 10) + "\" y2=\"" + fmt("%.2f", y(w)) + "\" stroke=\"#d62728\"/>\n";
    out += "<circle cx=\"" + fmt("%.1f", cx) + "\" cy=\"" + fmt("%.2f", y(mean)) +
           "\" r=\"4\" fill=\"#d62728\"/>\n";
    out += "<text x=\"" + fmt("%.1f", cx) + "\" y=\"" + fmt("%.1f", bottom + 20) + "\" text-anchor=\"middle\">" +
           region_name(region_names, k) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

std::string render(const SweepResult& r, ReportFormat f) {
  switch (f) {
    case ReportFormat::Csv: return to_csv(r);
    case ReportFormat::Markdown: return to_markdown(r);
    case ReportFormat::Svg: return to_svg(r);
  }
  return {};
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::vector<fs::path> emit_reports(const SweepResult& r, const std::vector<ReportFormat>& formats, const fs::path& dir,
                                   const std::string& stem) {
  std::vector<std::pair<fs::path, std::string>> rendered;
  for (auto f : formats) rendered.emplace_back(dir / (stem + "." + extension(f)), render(r, f));
  std::vector<fs::path> written;
  for (const auto& [path, text] : rendered) {
    write_text_atomic(path, text);
    written.push_back(path);
  }
  return written;
}

std::string comparison_markdown(const std::string& title, const std::vector<ComparisonRow>& rows) {
  std::string out = "### " + title + "\n\n| Variant | Mean Dice | Mean Std Dev |";
  const int n = rows.empty() ? 0 : rows.front().sweep.n_regions;
  for (int k = 0; k < n; ++k) out += " R" + std::to_string(k + 1) + " Dice |";
  out += "\n|---|--:|--:|";
  for (int k = 0; k < n; ++k) out += "--:|";
  out += "\n";
  for (const auto& row : rows) {
    out += "| " + row.variant + " | " + fmt("%.2f", row.sweep.mean_dice()) + " | " + fmt("%.2f", row.sweep.mean_std()) +
           " |";
    for (int k = 0; k < n; ++k) out += " " + fmt("%.2f", row.sweep.dice_mean[static_cast<std::size_t>(k)]) + " |";
    out += "\n";
  }
  return out;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "variant,mean_dice,mean_std\n";
  for (const auto& row : rows)
    out += row.variant + "," + exact(row.sweep.mean_dice()) + "," + exact(row.sweep.mean_std()) + "\n";
  return out;
}

}  // namespace relaxseg
