#include "wpnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace wpnn::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;  // 2051
constexpr std::uint32_t kLabelMagic = 0x00000801;  // 2049

std::uint32_t read_be32(std::istream& in, const char* field) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error(std::string("IDX parse error: truncated ") + field);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

ImageDataset load_idx(const std::string& path_images,
                      const std::string& path_labels, Split split) {
    std::ifstream fi(path_images, std::ios::binary);
    if (!fi) throw std::runtime_error("cannot open image file: " + path_images);
    if (read_be32(fi, "image magic") != kImageMagic)
        throw std::runtime_error("IDX parse error: bad image magic in " + path_images);
    std::uint32_t n = read_be32(fi, "image count");
    std::uint32_t rows = read_be32(fi, "image rows");
    std::uint32_t cols = read_be32(fi, "image cols");
    if (rows != 28 || cols != 28)
        throw std::runtime_error("IDX parse error: expected 28x28 images");

    std::ifstream fl(path_labels, std::ios::binary);
    if (!fl) throw std::runtime_error("cannot open label file: " + path_labels);
    if (read_be32(fl, "label magic") != kLabelMagic)
        throw std::runtime_error("IDX parse error: bad label magic in " + path_labels);
    std::uint32_t nl = read_be32(fl, "label count");
    if (n != nl)
        throw std::runtime_error("IDX parse error: image/label count mismatch");

    ImageDataset ds;
    ds.split = split;
    ds.images.resize(784, n);
    ds.labels.resize(n);
    std::vector<unsigned char> buf(784);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!fi.read(reinterpret_cast<char*>(buf.data()), 784))
            throw std::runtime_error("IDX parse error: truncated image data");
        for (int j = 0; j < 784; ++j)
            ds.images(j, i) = static_cast<float>(buf[j]) / 255.0f;
    }
    std::vector<unsigned char> lbuf(n);
    if (!fl.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(n)))
        throw std::runtime_error("IDX parse error: truncated label data");
    for (std::uint32_t i = 0; i < n; ++i) {
        if (lbuf[i] > 9)
            throw std::runtime_error("IDX parse error: label out of range 0..9");
        ds.labels[i] = lbuf[i];
    }
    return ds;
}

void write_idx_images(const std::string& path,
                      const std::vector<std::vector<unsigned char>>& images,
                      int rows, int cols) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    write_be32(f, kImageMagic);
    write_be32(f, static_cast<std::uint32_t>(images.size()));
    write_be32(f, static_cast<std::uint32_t>(rows));
    write_be32(f, static_cast<std::uint32_t>(cols));
    for (const auto& img : images) {
        if (static_cast<int>(img.size()) != rows * cols)
            throw std::invalid_argument("write_idx_images: wrong image size");
        f.write(reinterpret_cast<const char*>(img.data()),
                static_cast<std::streamsize>(img.size()));
    }
}

void write_idx_labels(const std::string& path,
                      const std::vector<unsigned char>& labels) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    write_be32(f, kLabelMagic);
    write_be32(f, static_cast<std::uint32_t>(labels.size()));
    f.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
}

void Normalizer::fit(const ImageDataset& train) {
    if (train.split != Split::Train)
        throw std::invalid_argument("Normalizer: stats must be fitted on the train split");
    const double n = static_cast<double>(train.size());
    if (mode == NormMode::UnitPower) {
        double power = train.images.cast<double>().squaredNorm() / (n * 784.0);
        scale = power < 1e-12 ? 1.0 : 1.0 / std::sqrt(power);
        mean = 0.0;
    } else {
        mean = train.images.cast<double>().mean();
        Eigen::ArrayXXd centered = train.images.cast<double>().array() - mean;
        double var = (centered * centered).mean();
        scale = var < 1e-12 ? 1.0 : 1.0 / std::sqrt(var);
    }
    fitted = true;
}

void Normalizer::apply(ImageDataset& ds) const {
    if (!fitted) throw std::logic_error("Normalizer: apply before fit");
    if (ds.normalized) return;
    if (mode == NormMode::ZScore)
        ds.images.array() -= static_cast<float>(mean);
    ds.images *= static_cast<float>(scale);
    ds.normalized = true;
}

ImageDataset subset(const ImageDataset& ds, Eigen::Index n) {
    n = std::min(n, ds.size());
    ImageDataset out;
    out.images = ds.images.leftCols(n);
    out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
    out.split = ds.split;
    out.normalized = ds.normalized;
    return out;
}

std::vector<std::vector<int>> batch_indices(Eigen::Index n, int batch_size,
                                            std::uint64_t seed, int epoch,
                                            bool shuffle) {
    if (batch_size < 1)
        throw std::invalid_argument("batch_indices: batch_size must be >= 1");
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = static_cast<int>(i);
    if (shuffle) {
        RngStream rs(seed, "batch-shuffle");
        auto stream = rs.split(static_cast<std::uint64_t>(epoch));
        std::shuffle(perm.begin(), perm.end(), stream.engine());
    }
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < perm.size(); i += static_cast<std::size_t>(batch_size)) {
        std::size_t e = std::min(perm.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                             perm.begin() + static_cast<std::ptrdiff_t>(e));
    }
    return batches;
}

void gather_batch(const ImageDataset& ds, const std::vector<int>& idx,
                  Eigen::MatrixXd& images_out, std::vector<int>& labels_out) {
    images_out.resize(ds.images.rows(), static_cast<Eigen::Index>(idx.size()));
    labels_out.resize(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        images_out.col(static_cast<Eigen::Index>(j)) =
            ds.images.col(idx[j]).cast<double>();
        labels_out[j] = ds.labels[static_cast<std::size_t>(idx[j])];
    }
}

}  // namespace wpnn::data
