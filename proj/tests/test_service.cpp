#include "helpers.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/formats.hpp"
#include "sagkit/manifest.hpp"
#include "sagkit/service.hpp"

#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace sagkit;
using namespace testing;

namespace {

struct Env {
    std::filesystem::path dir;
    std::string id = "pos0";
    int class_index = 0;
    std::shared_ptr<const Session> session;
    Sag sag;
};

// One fixture positive saved as PNG plus a SAG built by the engine on it.
const Env& env() {
    static const Env e = [] {
        Env out;
        out.dir = std::filesystem::temp_directory_path() / "sagkit_test_service";
        std::filesystem::remove_all(out.dir);
        std::filesystem::create_directories(out.dir / "images");
        std::filesystem::create_directories(out.dir / "sags");
        const auto& ds = fixture_data();
        const std::size_t i = first_positive(ds);
        out.class_index = ds.labels[i];
        write_png(out.dir / "images" / (out.id + ".png"), ds.images[i]);
        write_png(out.dir / "images" / "other.png", ds.images[i + 1]);

        const Image img = read_png(out.dir / "images" / (out.id + ".png"));
        const Baseline b = blur_baseline(img, kDefaultBlurSigma, fixture_model(), out.class_index);
        const SubsetScorer ss(fixture_model(), img, b.image, out.class_index, 7, 7);
        SearchConfig c;
        c.beam_width = 10;
        c.max_subset_size = 4;
        out.sag = build_sag(ss, diverse_roots(beam_search_mse(ss, c), 1, 3), out.id);
        binio::write_text(out.dir / "sags" / (out.id + ".sag.json"), sag_to_json(out.sag).dump());

        ServiceConfig sc;
        sc.model_path = fixture_dir() / "model.sfm";
        sc.image_dir = out.dir / "images";
        sc.sag_dir = out.dir / "sags";
        out.session = Session::load(sc);
        return out;
    }();
    return e;
}

Json body(const HttpResponse& r) { return Json::parse(r.body); }

std::string whatif_body(const std::string& id, int cls, const std::vector<int>& patches) {
    return Json{{"image_id", id}, {"class_index", cls}, {"patches", patches}}.dump();
}

std::vector<int> all_patches() {
    std::vector<int> v(49);
    for (int k = 0; k < 49; ++k) v[std::size_t(k)] = k;
    return v;
}

}  // namespace

TEST_CASE("session loads images, sags and baselines") {
    const auto& s = *env().session;
    CHECK(s.image_ids() == std::vector<std::string>{"other", "pos0"});
    CHECK(s.sag_ids() == std::vector<std::string>{"pos0"});
    REQUIRE(s.sag("pos0") != nullptr);
    CHECK(*s.sag("pos0") == env().sag);
    CHECK(s.baseline("pos0", env().class_index) != nullptr);
    CHECK(s.baseline("missing", 0) == nullptr);
    CHECK(s.model_hash() == sha256_file(fixture_dir() / "model.sfm"));
    ServiceConfig bad;
    bad.model_path = fixture_dir() / "model.sfm";
    bad.image_dir = env().dir / "nope";
    CHECK_THROWS(Session::load(bad));
}

TEST_CASE("health, listing and sag lookup") {
    const ServiceHandlers h(env().session);
    const auto health = h.health();
    CHECK(health.status == 200);
    CHECK(body(health)["status"] == "ok");
    CHECK(body(health)["model_hash"] == env().session->model_hash());
    CHECK(body(h.list_sags()) == Json::array({"pos0"}));
    const auto got = h.get_sag("pos0");
    CHECK(got.status == 200);
    CHECK(sag_from_json(body(got)) == env().sag);
    const auto missing = h.get_sag("nope");
    CHECK(missing.status == 404);
    CHECK(body(missing)["error"]["code"] == "sag_not_found");
}

TEST_CASE("whatif confidences") {
    const ServiceHandlers h(env().session);
    const int cls = env().class_index;
    const auto full = h.whatif(whatif_body("pos0", cls, all_patches()));
    REQUIRE(full.status == 200);
    CHECK(body(full)["ratio"].get<double>() == doctest::Approx(1.0).epsilon(1e-6));

    const auto empty = h.whatif(whatif_body("pos0", cls, {}));
    REQUIRE(empty.status == 200);
    const Image& img = *env().session->image("pos0");
    const Baseline* b = env().session->baseline("pos0", cls);
    const double expected = confidence_of(fixture_model(), img, b->image, PatchSubset(49), cls, 7, 7);
    CHECK(std::abs(body(empty)["confidence"].get<double>() - expected) < 1e-9);

    // Every SAG node's stored confidence is what the service reports for it.
    for (const SagNode& n : env().sag.nodes) {
        const auto r = h.whatif(whatif_body("pos0", cls, n.subset.members()));
        CHECK(std::abs(body(r)["confidence"].get<double>() - n.confidence) < 1e-9);
    }
}

TEST_CASE("whatif error codes") {
    const ServiceHandlers h(env().session);
    const int cls = env().class_index;
    auto code = [](const HttpResponse& r) { return body(r)["error"]["code"].get<std::string>(); };
    auto r = h.whatif("{not json");
    CHECK(r.status == 400);
    CHECK(code(r) == "invalid_json");
    r = h.whatif(R"({"image_id": "pos0"})");
    CHECK(r.status == 400);
    CHECK(code(r) == "invalid_request");
    r = h.whatif(whatif_body("nope", cls, {}));
    CHECK(r.status == 404);
    CHECK(code(r) == "image_not_found");
    r = h.whatif(whatif_body("pos0", 9, {}));
    CHECK(r.status == 400);
    CHECK(code(r) == "invalid_class");
    r = h.whatif(whatif_body("pos0", cls, {49}));
    CHECK(r.status == 400);
    CHECK(code(r) == "invalid_patches");
    r = h.whatif(whatif_body("pos0", cls, {3, 3}));
    CHECK(code(r) == "invalid_patches");
    r = h.whatif(R"({"image_id": "pos0", "class_index": 1, "patches": [], "grid": {"rows": 9, "cols": 9}})");
    CHECK(r.status == 400);
    CHECK(code(r) == "invalid_grid");
}

TEST_CASE("nearest and render") {
    const ServiceHandlers h(env().session);
    const SagNode& root = env().sag.nodes.front();
    std::string list;
    for (int m : root.subset.members()) list += (list.empty() ? "" : ",") + std::to_string(m);
    const auto near = h.nearest({{"sag_id", "pos0"}, {"patches", list}});
    REQUIRE(near.status == 200);
    CHECK(body(near)["node_ids"][0] == root.id);
    CHECK(body(near)["distances"][0] == 0);
    CHECK(body(near)["node_ids"].size() == env().sag.nodes.size());
    CHECK(h.nearest({{"sag_id", "x"}}).status == 404);
    CHECK(h.nearest({{"sag_id", "pos0"}, {"patches", "a"}}).status == 400);

    const auto png = h.render({{"image_id", "pos0"}, {"patches", list}});
    REQUIRE(png.status == 200);
    CHECK(png.content_type == "image/png");
    const Image got = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(png.body.data()), png.body.size()));
    const Image& img = *env().session->image("pos0");
    const Baseline* b = env().session->baseline("pos0", env().class_index);
    const Image want = apply_mask(img, b->image, subset_to_mask(root.subset, 7, 7), Upsampling::patch);
    CHECK(got == decode_png(encode_png(want)));
    CHECK(h.render({{"image_id", "other"}}).status == 400);  // no SAG to borrow a class from
    CHECK(h.render({{"image_id", "pos0"}, {"rows", "x"}}).status == 400);
}

TEST_CASE("http transport") {
    HttpService service(env().session);
    const int port = service.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread server([&] { service.listen(); });
    httplib::Client client("127.0.0.1", port);
    for (int i = 0; i < 100 && !client.Get("/health"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));

    const auto health = client.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    const auto options = client.Options("/whatif");
    REQUIRE(options);
    CHECK(options->status == 204);
    CHECK(options->get_header_value("Access-Control-Allow-Origin") == "*");

    const auto unknown = client.Get("/does-not-exist");
    REQUIRE(unknown);
    CHECK(unknown->status == 404);
    CHECK(Json::parse(unknown->body)["error"]["code"] == "not_found");

    const auto sag = client.Get("/sags/pos0");
    REQUIRE(sag);
    CHECK(sag_from_json(Json::parse(sag->body)) == env().sag);

    // Concurrent what-if queries all agree with the sequential answer.
    const std::string req = whatif_body("pos0", env().class_index, env().sag.nodes.front().subset.members());
    const double want = body(ServiceHandlers(env().session).whatif(req))["confidence"].get<double>();
    std::atomic<int> agree{0};
    std::vector<std::thread> clients;
    for (int t = 0; t < 8; ++t)
        clients.emplace_back([&] {
            httplib::Client c("127.0.0.1", port);
            for (int k = 0; k < 5; ++k) {
                const auto r = c.Post("/whatif", req, "application/json");
                if (r && r->status == 200 && Json::parse(r->body)["confidence"].get<double>() == want) ++agree;
            }
        });
    for (auto& t : clients) t.join();
    CHECK(agree == 40);

    service.stop();
    server.join();
}
