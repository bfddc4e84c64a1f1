#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relaxseg/eval.hpp"

namespace relaxseg {

enum class ReportFormat { Csv, Markdown, Svg };

std::string extension(ReportFormat f);
// Comma-separated list of "csv", "md", "svg"; throws ConfigError on anything else.
std::vector<ReportFormat> parse_report_formats(const std::string& list);

// Columns combo_mask,region,dice,iou; one row per (combination, region) in
// ascending mask order, then "mean" and "std" rows per region.
std::string to_csv(const SweepResult& r);
SweepResult parse_csv(const std::string& text);

// Table-1 layout: presence markers per modality, Dice per region, then
// Average and Std Dev rows. Rows ordered by modality count, then mask descending.
std::string to_markdown(const SweepResult& r, const std::vector<std::string>& region_names = {});
std::vector<ModalityCombination> table_order(int m_total);

// Per-region box plot over combinations (quartile box, median line), with a
// mean marker and mean +/- std whiskers.
std::string to_svg(const SweepResult& r, const std::vector<std::string>& region_names = {});

std::string render(const SweepResult& r, ReportFormat f);

// Writes via temp file + rename; throws IoError.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// Renders every format first, then writes; returns the written paths.
std::vector<std::filesystem::path> emit_reports(const SweepResult& r, const std::vector<ReportFormat>& formats,
                                                const std::filesystem::path& dir, const std::string& stem = "sweep");

// Generic comparison table: one row per variant with mean Dice and mean Std Dev.
struct ComparisonRow {
  std::string variant;
  SweepResult sweep;
};
std::string comparison_markdown(const std::string& title, const std::vector<ComparisonRow>& rows);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

}  // namespace relaxseg
