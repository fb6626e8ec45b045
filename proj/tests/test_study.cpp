#include <doctest.h>
#include <httplib.h>
#include <png.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "hvsobs/error.hpp"
#include "hvsobs/server.hpp"
#include "hvsobs/study.hpp"

using namespace hvsobs;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes, std::size_t& w, std::size_t& h) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  REQUIRE(png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()));
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  REQUIRE(png_image_finish_read(&image, nullptr, px.data(), 0, nullptr));
  w = image.width;
  h = image.height;
  return px;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an hvsobs::Error");
  return ErrorCode::invalid_argument;
}

// Walks a session to completion, scoring lesion stacks with `hit` and healthy with 0.
void finish(StudyService& svc, const std::string& sid, double hit = 3) {
  const auto order = svc.session_order(sid);
  for (std::size_t i = svc.session(sid).at("position").get<std::size_t>(); i < order.size(); ++i) {
    const bool lesion = order[i].ends_with("_l");
    svc.record_score({sid, svc.token_for(order[i]), lesion ? hit : 0.0, 2, 1000.0});
  }
}

struct Fixture {
  fs::path root;
  fs::path manifest;

  explicit Fixture(const std::string& name, std::size_t pairs = 5) : root(fixtures::scratch(name)) {
    manifest = fixtures::study_dataset(root, pairs);
  }
  StudyConfig config(std::size_t per_condition = 3) const {
    return fixtures::study_config(root, manifest, per_condition);
  }
};

}  // namespace

TEST_CASE("png slices") {
  ImageStack s;
  s.dims = {5, 3, 2};
  s.voxels.assign(s.dims.size(), 0.5f);
  s.voxels[s.dims.index(1, 0, 1)] = 1.0f;
  s.voxels[s.dims.index(2, 0, 1)] = 0.0f;
  s.voxels[s.dims.index(3, 0, 1)] = 0.25f;
  std::size_t w = 0, h = 0;
  auto px = decode_png(slice_png(s, 1), w, h);
  CHECK(w == 5);
  CHECK(h == 3);
  CHECK(px[0] == 128);  // 127.5 rounds half up
  CHECK(px[1] == 255);
  CHECK(px[2] == 0);
  CHECK(px[3] == 64);  // 63.75
  px = decode_png(slice_png(s, 1, {0.25, 0.75}), w, h);
  CHECK(px[0] == 128);
  CHECK(px[1] == 255);  // clamped
  CHECK(px[2] == 0);
  CHECK(px[3] == 0);
  CHECK(code_of([&] { slice_png(s, 2); }) == ErrorCode::not_found);
}

TEST_CASE("study selection") {
  Fixture f("select", 6);
  const auto m = load_manifest(f.manifest);
  const std::vector<int> levels{0, 2, 4};
  const auto sel = select_study_stacks(m, levels, 4, 2013);
  CHECK(sel.size() == 24);
  CHECK(select_study_stacks(m, levels, 4, 2013) == sel);
  CHECK(select_study_stacks(m, levels, 4, 2014) != sel);
  std::map<std::pair<int, Label>, int> per;
  for (auto i : sel) ++per[{m.entries[i].complexity, m.entries[i].label}];
  CHECK(per.size() == 6);
  for (const auto& [k, n] : per) CHECK(n == 4);
  CHECK(std::set<std::size_t>(sel.begin(), sel.end()).size() == sel.size());
  try {
    select_study_stacks(m, levels, 7, 2013);
    FAIL("expected validation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::validation);
    CHECK(std::string(e.what()).find("complexity 0") != std::string::npos);
  }
}

TEST_CASE("observers see the same set in different orders") {
  Fixture f("orders");
  StudyService svc(f.config());
  const auto a = svc.create_session("alice").at("session").get<std::string>();
  const auto b = svc.create_session("bob").at("session").get<std::string>();
  const auto a2 = svc.create_session("alice").at("session").get<std::string>();
  CHECK(a == "s0001");
  CHECK(b == "s0002");
  const auto oa = svc.session_order(a), ob = svc.session_order(b);
  CHECK(oa != ob);
  CHECK(svc.session_order(a2) == oa);
  auto sa = oa, sb = ob;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  CHECK(sa == sb);
  auto ids = svc.selected_ids();
  std::sort(ids.begin(), ids.end());
  CHECK(sa == ids);
}

TEST_CASE("score validation and ordering") {
  Fixture f("protocol");
  StudyService svc(f.config(2));
  const auto sid = svc.create_session("carol").at("session").get<std::string>();
  const auto order = svc.session_order(sid);
  const auto tok0 = svc.token_for(order[0]);
  const auto tok1 = svc.token_for(order[1]);
  CHECK(code_of([&] { svc.record_score({sid, tok0, 4, 1, 0}); }) == ErrorCode::validation);
  CHECK(code_of([&] { svc.record_score({sid, tok0, 1.5, 1, 0}); }) == ErrorCode::validation);
  CHECK(code_of([&] { svc.record_score({sid, tok0, 2, 0, 0}); }) == ErrorCode::validation);
  CHECK(code_of([&] { svc.record_score({sid, "deadbeef", 2, 1, 0}); }) == ErrorCode::not_found);
  CHECK(code_of([&] { svc.record_score({"s9999", tok0, 2, 1, 0}); }) == ErrorCode::not_found);
  CHECK(code_of([&] { svc.record_score({sid, tok1, 2, 1, 0}); }) == ErrorCode::out_of_order);
  const auto ok = svc.record_score({sid, tok0, 2, 1, 0});
  CHECK(ok.at("position") == 1);
  CHECK(code_of([&] { svc.record_score({sid, tok0, 2, 1, 0}); }) == ErrorCode::conflict);
  finish(svc, sid);
  CHECK(svc.next(sid).at("done") == true);
  CHECK(code_of([&] { svc.record_score({sid, tok1, 2, 1, 0}); }) == ErrorCode::conflict);
  const auto r = svc.session_results(sid);
  CHECK(!r.partial);
  CHECK(r.scored == 12);
  CHECK(r.percent_correct.by_level.size() == 3);
}

TEST_CASE("append-only logs survive a crash") {
  Fixture f("crash");
  const auto cfg = f.config(2);
  std::string sid;
  std::vector<std::string> order;
  {
    StudyService svc(cfg);
    sid = svc.create_session("dave").at("session").get<std::string>();
    order = svc.session_order(sid);
    for (int i = 0; i < 5; ++i) svc.record_score({sid, svc.token_for(order[i]), double(i % 4), 1, 10.0 * i});
  }
  const auto log = cfg.log_dir / (sid + ".jsonl");
  const auto intact = fs::file_size(log);
  std::ofstream(log, std::ios::app) << R"({"type":"score","stack_id":"c0_p0)";  // torn write
  {
    StudyService svc(cfg);
    CHECK(fs::file_size(log) == intact);
    CHECK(svc.session(sid).at("position") == 5);
    CHECK(svc.next(sid).at("stack") == svc.token_for(order[5]));
    svc.record_score({sid, svc.token_for(order[5]), 3, 1, 0});
    CHECK(svc.create_session("erin").at("session") == "s0002");
  }
  StudyService svc(cfg);
  CHECK(svc.session(sid).at("position") == 6);
  const auto recs = read_score_log(log);
  REQUIRE(recs.size() == 6);
  for (std::size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].stack_id == order[i]);
  CHECK(recs[2].score == 2);
  CHECK(recs[4].elapsed_ms == 40.0);

  // a log that disagrees with the presentation order is refused
  const auto ids = svc.selected_ids();
  const auto expected = ids[presentation_order(ids.size(), cfg.selection_seed, "zed")[0]];
  const auto wrong = ids[0] == expected ? ids[1] : ids[0];
  std::ofstream(cfg.log_dir / "s0003.jsonl")
      << json{{"type", "session"}, {"session", "s0003"}, {"observer_id", "zed"}, {"selection_seed", 2013}}.dump()
      << "\n"
      << json{{"type", "score"}, {"stack_id", wrong}, {"label", "lesion"}, {"complexity", 4}, {"score", 3}}.dump()
      << "\n";
  CHECK(code_of([&] { StudyService again(cfg); }) == ErrorCode::out_of_order);
}

TEST_CASE("http api end to end without label leakage") {
  Fixture f("http");
  StudyService svc(f.config(3));
  StudyServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  struct Running {
    StudyServer& s;
    std::thread th;
    ~Running() {
      s.stop();
      th.join();
    }
  } running{server, std::thread([&] { server.listen(); })};

  httplib::Client cli("127.0.0.1", port);
  std::vector<std::string> bodies;
  const auto keep = [&](const httplib::Result& r) {
    REQUIRE(r);
    bodies.push_back(r->body);
    return *r;
  };

  const auto created = keep(cli.Post("/api/sessions", R"({"observer_id":"frank"})", "application/json"));
  CHECK(created.status == 201);
  const auto sid = json::parse(created.body).at("session").get<std::string>();
  CHECK(keep(cli.Get("/api/sessions/" + sid)).status == 200);
  CHECK(keep(cli.Get("/api/sessions/nope")).status == 404);
  CHECK(keep(cli.Post("/api/sessions", "{}", "application/json")).status == 400);
  CHECK(keep(cli.Post("/api/sessions", "not json", "application/json")).status == 400);

  bool first = true;
  for (;;) {
    const auto next = json::parse(keep(cli.Get("/api/sessions/" + sid + "/next")).body);
    if (next.at("done").get<bool>()) break;
    const auto token = next.at("stack").get<std::string>();
    CHECK(next.at("slices_per_second") == 10.0);
    CHECK(next.at("loops_per_presentation") == 2);
    const auto nz = next.at("nz").get<std::size_t>();
    for (std::size_t k = 0; k < nz; ++k) {
      const auto png = keep(cli.Get("/api/stacks/" + token + "/slices/" + std::to_string(k) + ".png"));
      CHECK(png.status == 200);
      CHECK(png.get_header_value("Content-Type") == "image/png");
    }
    CHECK(keep(cli.Get("/api/stacks/" + token + "/slices/99.png")).status == 404);
    if (first) {
      CHECK(keep(cli.Post("/api/sessions/" + sid + "/scores", json{{"stack", token}, {"score", 7}}.dump(),
                          "application/json"))
                .status == 400);
      auto partial = json::parse(keep(cli.Get("/api/sessions/" + sid + "/results")).body);
      CHECK(partial.at("partial") == true);
      CHECK(!partial.contains("records"));
    }
    const auto post = [&](const std::string& tok) {
      return cli.Post("/api/sessions/" + sid + "/scores",
                      json{{"stack", tok}, {"score", 2}, {"presentations", 2}, {"elapsed_ms", 950.0}}.dump(),
                      "application/json");
    };
    CHECK(keep(post(token)).status == 200);
    if (first) CHECK(keep(post(token)).status == 409);
    first = false;
  }
  CHECK(keep(cli.Get("/")).status == 200);
  CHECK(keep(cli.Get("/api/nothing")).status == 404);

  // Nothing handed out before completion may name a stack, label or level.
  const auto ids = svc.selected_ids();
  for (const auto& body : bodies) {
    for (const char* word : {"lesion", "healthy", "label", "complexity", "stack_id"})
      CHECK_MESSAGE(body.find(word) == std::string::npos, word);
    for (const auto& id : ids) CHECK(body.find(id) == std::string::npos);
  }

  const auto done = json::parse(cli.Get("/api/sessions/" + sid + "/results")->body);
  CHECK(done.at("partial") == false);
  CHECK(done.at("records").size() == 18);
  CHECK(done.at("percent_correct").at("4").at("fraction") == 1.0);
}

TEST_CASE("http status mapping") {
  CHECK(http_status(ErrorCode::not_found) == 404);
  CHECK(http_status(ErrorCode::conflict) == 409);
  CHECK(http_status(ErrorCode::out_of_order) == 409);
  CHECK(http_status(ErrorCode::validation) == 400);
  CHECK(http_status(ErrorCode::io) == 500);
}

TEST_CASE("study config paths resolve against the file") {
  const auto root = fixtures::scratch("study_cfg");
  std::ofstream(root / "s.json") << R"({"manifest": "d/manifest.json", "log_dir": "logs", "levels": [0, 4],
    "per_condition": 9, "window": {"lo": 0.1, "hi": 0.9}})";
  const auto c = load_study_config(root / "s.json");
  CHECK(c.manifest == root / "d/manifest.json");
  CHECK(c.log_dir == root / "logs");
  CHECK(c.levels == std::vector<int>{0, 4});
  CHECK(c.per_condition == 9);
  CHECK(c.window.lo == doctest::Approx(0.1));
  CHECK(c.selection_seed == 2013);
}
