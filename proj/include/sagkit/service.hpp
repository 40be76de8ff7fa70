#pragma once

#include "sagkit/baseline.hpp"
#include "sagkit/image.hpp"
#include "sagkit/sag.hpp"
#include "sagkit/toy_cnn.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sagkit {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path model_path;
    std::filesystem::path image_dir;  // <id>.png
    std::filesystem::path sag_dir;    // <id>.sag.json
    double blur_sigma = kDefaultBlurSigma;
    double baseline_epsilon = kDefaultBaselineEpsilon;
    int default_grid = 7;
};

/// Immutable registry shared by all requests.
class Session {
public:
    /// Loads the model, every PNG under image_dir and every *.sag.json under sag_dir,
    /// and precomputes blurred baselines for each (image, class).
    static std::shared_ptr<const Session> load(const ServiceConfig& config);

    const ToyCnn& model() const { return model_; }
    const std::string& model_hash() const { return model_hash_; }
    const ServiceConfig& config() const { return config_; }
    const Image* image(const std::string& id) const;
    const Sag* sag(const std::string& id) const;
    /// Null when the baseline could not satisfy the epsilon check.
    const Baseline* baseline(const std::string& image_id, int class_index) const;
    std::vector<std::string> sag_ids() const;
    std::vector<std::string> image_ids() const;

private:
    explicit Session(ToyCnn model) : model_(std::move(model)) {}

    ToyCnn model_;
    std::string model_hash_;
    ServiceConfig config_;
    std::map<std::string, Image> images_;
    std::map<std::string, Sag> sags_;
    std::map<std::pair<std::string, int>, std::optional<Baseline>> baselines_;
};

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Transport-independent request handlers; query parameters are passed as a map.
class ServiceHandlers {
public:
    explicit ServiceHandlers(std::shared_ptr<const Session> session) : session_(std::move(session)) {}

    HttpResponse health() const;
    HttpResponse list_sags() const;
    HttpResponse get_sag(const std::string& id) const;
    HttpResponse whatif(const std::string& json_body) const;
    HttpResponse render(const std::map<std::string, std::string>& params) const;
    HttpResponse nearest(const std::map<std::string, std::string>& params) const;

private:
    std::shared_ptr<const Session> session_;
};

/// Machine-readable error body: {"error": {"code": ..., "message": ...}}.
HttpResponse error_response(int status, const std::string& code, const std::string& message);

/// Serves the handlers over HTTP with CORS headers. listen() blocks until stop().
class HttpService {
public:
    explicit HttpService(std::shared_ptr<const Session> session);
    ~HttpService();
    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Binds host:port (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace sagkit
