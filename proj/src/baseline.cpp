#include "sagkit/baseline.hpp"

#include "sagkit/errors.hpp"

#include <cmath>
#include <sstream>

namespace sagkit {
namespace {

int reflect(int i, int n) {
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = int(std::ceil(3.0 * sigma));
    std::vector<double> k(std::size_t(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-double(i * i) / (2.0 * sigma * sigma));
        k[std::size_t(i + radius)] = v;
        total += v;
    }
    for (double& v : k) v /= total;
    return k;
}

}  // namespace

Image gaussian_blur(const Image& image, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InputError("blur sigma must be positive and finite");
    const int h = image.height(), w = image.width(), ch = image.channels();
    const auto kernel = gaussian_kernel(sigma);
    const int radius = int(kernel.size() / 2);

    std::vector<double> rows(image.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    s += kernel[std::size_t(k + radius)] * image.at(y, reflect(x + k, w), c);
                rows[image.index(y, x, c)] = s;
            }
    std::vector<double> out(image.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k)
                    s += kernel[std::size_t(k + radius)] * rows[image.index(reflect(y + k, h), x, c)];
                out[image.index(y, x, c)] = s;
            }
    return clamped_image(image.shape(), out);
}

Baseline blur_baseline(const Image& image, double sigma, const Scorer& scorer, int class_index, double epsilon) {
    if (!(sigma > 0.0)) throw InputError("blur sigma must be positive");
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw InputError("epsilon must lie in (0,1]");
    double s = sigma;
    double last = 1.0;
    for (int attempt = 0; attempt <= kMaxBlurDoublings; ++attempt, s *= 2.0) {
        Image blurred = gaussian_blur(image, s);
        last = score(scorer, blurred, class_index);
        if (last <= epsilon) return Baseline{std::move(blurred), s, last};
    }
    std::ostringstream msg;
    msg << "blurred baseline still scores " << last << " > epsilon " << epsilon << " for class " << class_index
        << " after " << kMaxBlurDoublings << " sigma doublings";
    throw BaselineError(msg.str());
}

}  // namespace sagkit
