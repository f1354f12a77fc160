#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "wpnn/rng.hpp"

namespace wpnn::data {

enum class Split { Train, Test };

// Images as 784 x n columns in [0,1] (before normalization).
struct ImageDataset {
    Eigen::MatrixXf images;   // 784 x n
    std::vector<int> labels;  // values in 0..9
    Split split = Split::Train;
    bool normalized = false;

    Eigen::Index size() const { return images.cols(); }
};

// Big-endian IDX reader; magic 0x00000803 for images, 0x00000801 for labels.
ImageDataset load_idx(const std::string& path_images,
                      const std::string& path_labels,
                      Split split = Split::Train);

// Writers for fixtures and for converting other sources into IDX.
void write_idx_images(const std::string& path,
                      const std::vector<std::vector<unsigned char>>& images,
                      int rows = 28, int cols = 28);
void write_idx_labels(const std::string& path,
                      const std::vector<unsigned char>& labels);

enum class NormMode { UnitPower, ZScore };

// Scaling statistics are fitted on the training split only.
struct Normalizer {
    NormMode mode = NormMode::UnitPower;
    double mean = 0.0;
    double scale = 1.0;
    bool fitted = false;

    void fit(const ImageDataset& train);
    // Applies the fitted stats; a no-op on an already-normalized dataset.
    void apply(ImageDataset& ds) const;
};

// First n samples, for fast CI runs.
ImageDataset subset(const ImageDataset& ds, Eigen::Index n);

// Deterministic batch index sequence: a full permutation per epoch drawn from
// (seed, epoch); the last short batch is kept. shuffle=false keeps order.
std::vector<std::vector<int>> batch_indices(Eigen::Index n, int batch_size,
                                            std::uint64_t seed, int epoch,
                                            bool shuffle = true);

// Materializes a batch as double-precision columns plus labels.
void gather_batch(const ImageDataset& ds, const std::vector<int>& idx,
                  Eigen::MatrixXd& images_out, std::vector<int>& labels_out);

}  // namespace wpnn::data
