#include "doctest_torch.hpp"

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "relaxseg/errors.hpp"
#include "relaxseg/eval.hpp"
#include "relaxseg/report.hpp"
#include "relaxseg/train.hpp"

using namespace relaxseg;

namespace {

SweepResult random_sweep(std::uint64_t seed, int m = 4, int n = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SweepResult r;
  r.m_total = m;
  r.n_regions = n;
  for (const auto& c : enumerate_combinations(m)) {
    SweepRow row{c, {}, {}};
    for (int k = 0; k < n; ++k) {
      const double d = u(rng);
      row.dice.push_back(100 * d);
      row.iou.push_back(100 * d / (2 - d));
    }
    r.rows.push_back(row);
  }
  r.recompute_aggregates();
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("dice and iou match voxel-set oracles exactly") {
  for (int k = 0; k < 200; ++k) {
    torch::manual_seed(k);
    const bool batched = k % 2 == 0;
    const auto shape = batched ? std::vector<std::int64_t>{2, 3, 4, 4, 4} : std::vector<std::int64_t>{3, 4, 4, 4};
    const auto probs = torch::rand(shape);
    const auto truth = (torch::rand(shape) > 0.6).to(torch::kFloat32);
    const double thr = k % 3 == 0 ? 0.5 : 0.3;
    const auto want = oracle::set_scores(probs, truth, thr);
    CHECK(dice_score(probs, truth, thr) == want.dice);
    CHECK(iou_score(probs, truth, thr) == want.iou);
  }
}

TEST_CASE("hand-computed overlaps") {
  auto truth = torch::zeros({1, 2, 2, 2});
  truth[0][0].fill_(1);  // 4 voxels
  auto pred = torch::zeros({1, 2, 2, 2});
  pred[0][0][0].fill_(1);  // 2 of them
  pred[0][1][0].fill_(1);  // plus 2 outside
  CHECK(dice_score(pred, truth)[0] == doctest::Approx(50.0));
  CHECK(iou_score(pred, truth)[0] == doctest::Approx(100.0 / 3.0));
  CHECK(dice_score(torch::zeros({1, 2, 2, 2}), torch::zeros({1, 2, 2, 2}))[0] == 100.0);
  CHECK(iou_score(torch::zeros({1, 2, 2, 2}), torch::zeros({1, 2, 2, 2}))[0] == 100.0);
  CHECK(dice_score(torch::ones({1, 2, 2, 2}), torch::zeros({1, 2, 2, 2}))[0] == 0.0);
  CHECK_THROWS_AS(dice_score(pred, torch::zeros({1, 2, 2, 3})), InvalidArgument);
  CHECK_THROWS_AS(dice_score(pred, truth, 1.0), InvalidArgument);
}

TEST_CASE("pooled counts satisfy IoU = D / (2 - D)") {
  OverlapCounts c(3);
  for (int k = 0; k < 5; ++k) {
    torch::manual_seed(40 + k);
    c.add(torch::rand({3, 4, 4, 4}), (torch::rand({3, 4, 4, 4}) > 0.5).to(torch::kFloat32), 0.5);
  }
  const auto d = c.dice(), j = c.iou();
  for (int k = 0; k < 3; ++k) CHECK(std::abs(j[k] / 100 - (d[k] / 100) / (2 - d[k] / 100)) < 1e-9);
}

TEST_CASE("sweep aggregates use population statistics") {
  SweepResult r;
  r.m_total = 2;
  r.n_regions = 1;
  for (double d : {10.0, 20.0, 60.0}) r.rows.push_back({ModalityCombination(1, 2), {d}, {d / 2}});
  r.recompute_aggregates();
  CHECK(r.dice_mean[0] == doctest::Approx(30.0));
  CHECK(r.dice_std[0] == doctest::Approx(std::sqrt((400.0 + 100.0 + 900.0) / 3.0)));
  CHECK(r.mean_dice() == doctest::Approx(30.0));
}

TEST_CASE("csv report") {
  const auto r = random_sweep(3);
  const auto text = to_csv(r);
  SUBCASE("round trip is exact") { CHECK(parse_csv(text) == r); }
  SUBCASE("15 x N rows plus 2 x N aggregates") { CHECK(lines(text).size() == 1 + 15 * 3 + 2 * 3); }
  SUBCASE("every emitted row satisfies the Dice/IoU identity") {
    const auto back = parse_csv(text);
    for (const auto& row : back.rows)
      for (int k = 0; k < 3; ++k)
        CHECK(std::abs(row.iou[k] / 100 - (row.dice[k] / 100) / (2 - row.dice[k] / 100)) < 1e-9);
  }
  SUBCASE("malformed input") {
    CHECK_THROWS_AS(parse_csv("nope\n"), FormatError);
    CHECK_THROWS_AS(parse_csv("combo_mask,region,dice,iou\n1,0,x,1\n"), FormatError);
    auto ls = lines(text);
    ls.erase(ls.begin() + 5);
    std::string cut;
    for (const auto& l : ls) cut += l + "\n";
    CHECK_THROWS_AS(parse_csv(cut), FormatError);
  }
}

TEST_CASE("markdown table mirrors the paper layout") {
  const auto r = random_sweep(4);
  const auto ls = lines(to_markdown(r, {"WT", "TC", "ET"}));
  REQUIRE(ls.size() == 2 + 17);
  CHECK(ls[0] == "| M1 | M2 | M3 | M4 | WT Dice | TC Dice | ET Dice |");
  CHECK(ls[2].rfind("| ◦ | ◦ | ◦ | • |", 0) == 0);
  CHECK(ls[5].rfind("| • | ◦ | ◦ | ◦ |", 0) == 0);
  CHECK(ls[16].rfind("| • | • | • | • |", 0) == 0);
  CHECK(ls[17].rfind("| Average |", 0) == 0);
  CHECK(ls[18].rfind("| Std Dev |", 0) == 0);
  const auto order = table_order(4);
  CHECK(order.front().mask() == 0b1000);
  CHECK(order.back().is_complete());
}

TEST_CASE("svg box plot and report emission") {
  const auto r = random_sweep(5);
  const auto svg = to_svg(r);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  std::size_t boxes = 0;
  for (auto p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++boxes;
  CHECK(boxes == 3);

  fixtures::TempDir dir("emit");
  const auto paths = emit_reports(r, parse_report_formats("csv,md,svg"), dir.path(), "sweep");
  REQUIRE(paths.size() == 3);
  for (const auto& p : paths) CHECK(std::filesystem::exists(p));
  std::ifstream in(paths[0]);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(parse_csv(ss.str()) == r);
  CHECK_THROWS_AS(parse_report_formats("csv,pdf"), ConfigError);
}

TEST_CASE("sweeps on a tiny network") {
  const auto data = fixtures::tiny_dataset(3);
  auto net = make_network(fixtures::tiny_net(), 8);
  net->enable_adapters(AdapterVariant::Full);
  SUBCASE("deterministic and byte-identical reports") {
    const auto a = sweep_combinations(net, data), b = sweep_combinations(net, data);
    CHECK(a == b);
    CHECK(to_csv(a) == to_csv(b));
    CHECK(a.rows.size() == 15);
    for (const auto& row : a.rows)
      for (int k = 0; k < 3; ++k) CHECK(std::abs(row.iou[k] / 100 - (row.dice[k] / 100) / (2 - row.dice[k] / 100)) < 1e-9);
  }
  SUBCASE("chunking does not change the result") {
    EvalOptions one;
    one.chunk = 1;
    CHECK(sweep_combinations(net, data, one) == sweep_combinations(net, data));
  }
  SUBCASE("identity permutation equals the canonical order") {
    const auto rob = shuffle_robustness(net, data, {{0, 1, 2, 3}});
    CHECK(rob.per_permutation[0] == rob.canonical);
    const auto seeded = shuffle_robustness(net, data, 5, 99);
    CHECK(seeded.permutations.size() == 5);
    CHECK(seeded.canonical == rob.canonical);
  }
  SUBCASE("activation profile covers every combination and level") {
    const auto prof = activation_profile(net, data, enumerate_combinations(4));
    CHECK(prof.combos.size() == 15);
    CHECK(prof.gap() >= 0.0);
    for (const auto& r : prof.response)
      for (double v : r) CHECK(v >= 0.0);
  }
}
