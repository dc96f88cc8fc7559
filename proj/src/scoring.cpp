#include "fcdd/scoring.hpp"

#include "fcdd/heatmap.hpp"

namespace fcdd {

Raster fcdd_heatmaps(Network& net, const Raster& batch, double sigma) {
    const ReceptiveField rf = receptive_field(net.config());
    Raster z = net.forward(batch, nd::Mode::eval);
    return gaussian_upsample(huber_map(z), rf, sigma,
                             net.config().in_h, net.config().in_w);
}

SampleScorer make_fcdd_scorer(Network& net, const CheckpointMeta& meta) {
    return [&net, meta](const Sample& s) {
        const Raster input = preprocess_image(s.image, meta.channel_mean, meta.channel_std,
                                              net.config().in_h, net.config().in_w);
        return image_score(fcdd_heatmaps(net, input, meta.sigma));
    };
}

SampleScorer make_ae_scorer(Autoencoder& ae, const CheckpointMeta& meta) {
    return [&ae, meta](const Sample& s) {
        const Raster input =
            preprocess_image(s.image, meta.channel_mean, meta.channel_std,
                             ae.encoder.config().in_h, ae.encoder.config().in_w);
        return ae_score(ae, input);
    };
}

}  // namespace fcdd
