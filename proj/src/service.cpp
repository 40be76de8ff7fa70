#include "sagkit/service.hpp"

#include "sagkit/binary_io.hpp"
#include "sagkit/errors.hpp"
#include "sagkit/formats.hpp"
#include "sagkit/manifest.hpp"

#include <httplib.h>

#include <algorithm>

namespace sagkit {

std::shared_ptr<const Session> Session::load(const ServiceConfig& config) {
    auto session = std::shared_ptr<Session>(new Session(ToyCnn::load(config.model_path)));
    session->model_hash_ = sha256_file(config.model_path);
    session->config_ = config;
    const Shape want = session->model_.input_shape();

    if (!config.image_dir.empty()) {
        if (!std::filesystem::is_directory(config.image_dir))
            throw IoError("image directory " + config.image_dir.string() + " does not exist");
        for (const auto& entry : std::filesystem::directory_iterator(config.image_dir)) {
            if (entry.path().extension() != ".png") continue;
            Image img = read_png(entry.path());
            if (img.shape() != want) continue;  // not an input for this model
            session->images_.emplace(entry.path().stem().string(), std::move(img));
        }
    }
    if (!config.sag_dir.empty()) {
        if (!std::filesystem::is_directory(config.sag_dir))
            throw IoError("SAG directory " + config.sag_dir.string() + " does not exist");
        for (const auto& entry : std::filesystem::directory_iterator(config.sag_dir)) {
            const std::string name = entry.path().filename().string();
            const std::string suffix = ".sag.json";
            if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
                continue;
            Sag sag = sag_from_json(Json::parse(binio::read_text(entry.path())));
            session->sags_.emplace(name.substr(0, name.size() - suffix.size()), std::move(sag));
        }
    }
    for (const auto& [id, img] : session->images_)
        for (int c = 0; c < session->model_.class_count(); ++c) {
            std::optional<Baseline> b;
            try {
                b = blur_baseline(img, config.blur_sigma, session->model_, c, config.baseline_epsilon);
            } catch (const BaselineError&) {
            }
            session->baselines_.emplace(std::make_pair(id, c), std::move(b));
        }
    return session;
}

const Image* Session::image(const std::string& id) const {
    auto it = images_.find(id);
    return it == images_.end() ? nullptr : &it->second;
}

const Sag* Session::sag(const std::string& id) const {
    auto it = sags_.find(id);
    return it == sags_.end() ? nullptr : &it->second;
}

const Baseline* Session::baseline(const std::string& image_id, int class_index) const {
    auto it = baselines_.find({image_id, class_index});
    return it == baselines_.end() || !it->second ? nullptr : &*it->second;
}

std::vector<std::string> Session::sag_ids() const {
    std::vector<std::string> out;
    for (const auto& kv : sags_) out.push_back(kv.first);
    return out;
}

std::vector<std::string> Session::image_ids() const {
    std::vector<std::string> out;
    for (const auto& kv : images_) out.push_back(kv.first);
    return out;
}

HttpResponse error_response(int status, const std::string& code, const std::string& message) {
    return {status, "application/json", Json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

namespace {

HttpResponse json_ok(const Json& j) { return {200, "application/json", j.dump()}; }

// Thrown inside handlers and turned into an error response.
struct RequestError {
    int status;
    std::string code;
    std::string message;
};

struct Query {
    const Image* image;
    const Baseline* baseline;
    int class_index;
    int rows, cols;
};

int parse_int(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw RequestError{400, "invalid_request", std::string(what) + " must be an integer"};
}

Query resolve(const Session& s, const std::string& image_id, int class_index, int rows, int cols) {
    const Image* img = s.image(image_id);
    if (!img) throw RequestError{404, "image_not_found", "unknown image id \"" + image_id + "\""};
    if (class_index < 0 || class_index >= s.model().class_count())
        throw RequestError{400, "invalid_class", "class_index out of range"};
    if (rows <= 0 || cols <= 0 || rows * cols > kMaxPatchCount || rows > img->height() || cols > img->width())
        throw RequestError{400, "invalid_grid", "grid dimensions out of range"};
    const Baseline* b = s.baseline(image_id, class_index);
    if (!b)
        throw RequestError{422, "baseline_unavailable",
                           "no blurred baseline meets the epsilon check for this image and class"};
    return {img, b, class_index, rows, cols};
}

PatchSubset subset_from(const std::string& text, int patch_count) {
    try {
        return parse_patch_list(text, patch_count);
    } catch (const InputError& e) {
        throw RequestError{400, "invalid_patches", e.what()};
    }
}

template <typename F>
HttpResponse guarded(F&& f) {
    try {
        return f();
    } catch (const RequestError& e) {
        return error_response(e.status, e.code, e.message);
    } catch (const InputError& e) {
        return error_response(400, "invalid_request", e.what());
    } catch (const std::exception& e) {
        return error_response(500, "internal_error", e.what());
    }
}

const std::string* find_param(const std::map<std::string, std::string>& p, const std::string& key) {
    auto it = p.find(key);
    return it == p.end() ? nullptr : &it->second;
}

}  // namespace

HttpResponse ServiceHandlers::health() const {
    return json_ok({{"status", "ok"}, {"model_hash", session_->model_hash()}});
}

HttpResponse ServiceHandlers::list_sags() const { return json_ok(session_->sag_ids()); }

HttpResponse ServiceHandlers::get_sag(const std::string& id) const {
    const Sag* sag = session_->sag(id);
    if (!sag) return error_response(404, "sag_not_found", "unknown SAG id \"" + id + "\"");
    return json_ok(sag_to_json(*sag));
}

HttpResponse ServiceHandlers::whatif(const std::string& json_body) const {
    return guarded([&] {
        Json req;
        try {
            req = Json::parse(json_body);
        } catch (const Json::parse_error& e) {
            throw RequestError{400, "invalid_json", e.what()};
        }
        if (!req.is_object() || !req.contains("image_id") || !req["image_id"].is_string() ||
            !req.contains("class_index") || !req["class_index"].is_number_integer() || !req.contains("patches") ||
            !req["patches"].is_array())
            throw RequestError{400, "invalid_request",
                               "expected {image_id: string, class_index: integer, patches: [integer]}"};
        int rows = session_->config().default_grid, cols = rows;
        if (req.contains("grid")) {
            const Json& g = req["grid"];
            if (!g.is_object() || !g.contains("rows") || !g.contains("cols") || !g["rows"].is_number_integer() ||
                !g["cols"].is_number_integer())
                throw RequestError{400, "invalid_grid", "grid must be {rows: integer, cols: integer}"};
            rows = g["rows"].get<int>();
            cols = g["cols"].get<int>();
        }
        const Query q = resolve(*session_, req["image_id"].get<std::string>(), req["class_index"].get<int>(), rows, cols);
        std::vector<int> idx;
        for (const Json& p : req["patches"]) {
            if (!p.is_number_integer()) throw RequestError{400, "invalid_patches", "patch indices must be integers"};
            idx.push_back(p.get<int>());
        }
        PatchSubset subset;
        try {
            subset = PatchSubset::of(rows * cols, idx);
        } catch (const InputError& e) {
            throw RequestError{400, "invalid_patches", e.what()};
        }
        const double conf = confidence_of(session_->model(), *q.image, q.baseline->image, subset, q.class_index,
                                          q.rows, q.cols);
        const double full = score(session_->model(), *q.image, q.class_index);
        Json out = {{"confidence", conf}, {"full_confidence", full}};
        out["ratio"] = full > 0.0 ? Json(conf / full) : Json(nullptr);
        return json_ok(out);
    });
}

HttpResponse ServiceHandlers::render(const std::map<std::string, std::string>& params) const {
    return guarded([&] {
        const std::string* image_id = find_param(params, "image_id");
        if (!image_id) throw RequestError{400, "invalid_request", "image_id is required"};
        int class_index = -1;
        if (const std::string* c = find_param(params, "class_index")) {
            class_index = parse_int(*c, "class_index");
        } else if (const Sag* sag = session_->sag(*image_id)) {
            class_index = sag->class_index;
        } else {
            throw RequestError{400, "invalid_request", "class_index is required when no SAG matches the image"};
        }
        int rows = session_->config().default_grid, cols = rows;
        if (const std::string* r = find_param(params, "rows")) rows = parse_int(*r, "rows");
        if (const std::string* c = find_param(params, "cols")) cols = parse_int(*c, "cols");
        const Query q = resolve(*session_, *image_id, class_index, rows, cols);
        const std::string* patches = find_param(params, "patches");
        const PatchSubset subset = subset_from(patches ? *patches : "", rows * cols);
        const Image masked =
            apply_mask(*q.image, q.baseline->image, subset_to_mask(subset, rows, cols), Upsampling::patch);
        const auto png = encode_png(masked);
        return HttpResponse{200, "image/png", std::string(png.begin(), png.end())};
    });
}

HttpResponse ServiceHandlers::nearest(const std::map<std::string, std::string>& params) const {
    return guarded([&] {
        const std::string* sag_id = find_param(params, "sag_id");
        if (!sag_id) throw RequestError{400, "invalid_request", "sag_id is required"};
        const Sag* sag = session_->sag(*sag_id);
        if (!sag) throw RequestError{404, "sag_not_found", "unknown SAG id \"" + *sag_id + "\""};
        const std::string* patches = find_param(params, "patches");
        const PatchSubset query = subset_from(patches ? *patches : "", sag->grid_rows * sag->grid_cols);
        Json ids = Json::array(), dist = Json::array();
        for (const auto& [id, d] : nearest_nodes(*sag, query)) {
            ids.push_back(id);
            dist.push_back(d);
        }
        return json_ok({{"sag_id", *sag_id}, {"node_ids", ids}, {"distances", dist}});
    });
}

struct HttpService::Impl {
    ServiceHandlers handlers;
    httplib::Server server;

    explicit Impl(std::shared_ptr<const Session> s) : handlers(std::move(s)) {}
};

namespace {

void reply(httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type.c_str());
}

std::map<std::string, std::string> params_of(const httplib::Request& req) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : req.params) out.emplace(k, v);
    return out;
}

}  // namespace

HttpService::HttpService(std::shared_ptr<const Session> session) : impl_(std::make_unique<Impl>(std::move(session))) {
    auto& srv = impl_->server;
    auto* h = &impl_->handlers;
    srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                             {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                             {"Access-Control-Allow-Headers", "Content-Type"}});
    srv.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/health", [h](const httplib::Request&, httplib::Response& res) { reply(res, h->health()); });
    srv.Get("/sags", [h](const httplib::Request&, httplib::Response& res) { reply(res, h->list_sags()); });
    srv.Get(R"(/sags/([^/]+))", [h](const httplib::Request& req, httplib::Response& res) {
        reply(res, h->get_sag(req.matches[1].str()));
    });
    srv.Post("/whatif", [h](const httplib::Request& req, httplib::Response& res) { reply(res, h->whatif(req.body)); });
    srv.Get("/render",
            [h](const httplib::Request& req, httplib::Response& res) { reply(res, h->render(params_of(req))); });
    srv.Get("/nearest",
            [h](const httplib::Request& req, httplib::Response& res) { reply(res, h->nearest(params_of(req))); });
    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty()) return;
        const HttpResponse r = res.status == 404 ? error_response(404, "not_found", "no such endpoint")
                                                 : error_response(res.status, "http_error", "request failed");
        reply(res, r);
    });
}

HttpService::~HttpService() { stop(); }

int HttpService::bind(const std::string& host, int port) {
    if (port == 0) {
        const int bound = impl_->server.bind_to_any_port(host.c_str());
        if (bound < 0) throw IoError("cannot bind " + host);
        return bound;
    }
    if (!impl_->server.bind_to_port(host.c_str(), port))
        throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpService::listen() { impl_->server.listen_after_bind(); }

void HttpService::stop() { impl_->server.stop(); }

}  // namespace sagkit
