#include <benchmark/benchmark.h>

#include "wpnn/phylayers.hpp"

using namespace wpnn;
using ad::CTensor;
using ad::Mat;
using ad::Tape;

namespace {

CTensor random_ctensor(Eigen::Index r, Eigen::Index c, RngStream& rng) {
    return chan::complex_gaussian(r, c, 1.0, rng);
}

void bm_complex_matmul(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    RngStream rng(1, "bench");
    CTensor a = random_ctensor(n, n, rng), b = random_ctensor(n, n, rng);
    for (auto _ : state) {
        Tape t;
        benchmark::DoNotOptimize(t.value(t.cmatmul(t.leaf(a), t.leaf(b))));
    }
}
BENCHMARK(bm_complex_matmul)->Arg(32)->Arg(128);

void bm_rapp_activation(benchmark::State& state) {
    const auto n = static_cast<Eigen::Index>(state.range(0));
    RngStream rng(2, "bench");
    CTensor x = random_ctensor(n, 128, rng);
    for (auto _ : state)
        benchmark::DoNotOptimize(act::apply_activation(x, act::Rapp{}));
}
BENCHMARK(bm_rapp_activation)->Arg(32)->Arg(256);

void bm_channel_sampling(benchmark::State& state) {
    RngStream rng(3, "bench");
    for (auto _ : state)
        benchmark::DoNotOptimize(chan::sample_rayleigh(64, 64, rng));
}
BENCHMARK(bm_channel_sampling);

void bm_relay_forward_backward(benchmark::State& state) {
    const int hops = static_cast<int>(state.range(0));
    const int na = 32, batch = 128;
    RngStream init(4, "bench");

    phy::WpnnModel model;
    chan::ChannelRealization ident;
    ident.h = CTensor::identity(na);
    for (int i = 0; i < hops; ++i) {
        phy::RelayHop hop;
        hop.gain = chan::complex_gaussian(na, na, 1.0 / na, init);
        hop.activation = act::Rapp{};
        hop.noise = chan::NoiseSpec::from_snr_db(30.0);
        model.push_layer(hop, ident, false);
    }
    model.readout.bias = Mat::Zero(na, 1);
    model.readout.trainable = false;

    CTensor x = random_ctensor(na, batch, init);
    RngStream noise(5, "bench-noise");
    std::vector<int> labels(batch, 0);
    for (auto _ : state) {
        Tape t;
        auto res = phy::forward_network(t, model, x, true, &noise, true);
        t.backward(t.softmax_xent(res.logits, labels));
        benchmark::DoNotOptimize(t.gradients());
    }
}
BENCHMARK(bm_relay_forward_backward)->Arg(1)->Arg(5);

}  // namespace

BENCHMARK_MAIN();
