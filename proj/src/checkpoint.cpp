#include "ssnn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ssnn {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'S', 'S', 'N', 'N', 'C', 'K', 'P', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

void put_tensor(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f64(out, t[i]);
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(size_t n) {
        if (pos_ + n > data_.size()) throw parse_error("'" + path_ + "': truncated checkpoint at offset " + std::to_string(pos_));
    }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

ordered_json config_to_json(const TrainConfig& c) {
    ordered_json j;
    j["batch_size"] = c.batch_size;
    j["iterations"] = c.iterations;
    j["learning_rate"] = c.learning_rate;
    j["beta1"] = c.beta1;
    j["beta2"] = c.beta2;
    j["adam_eps"] = c.adam_eps;
    j["tau_start"] = c.tau_start;
    j["tau_end"] = c.tau_end;
    j["anneal"] = c.anneal;
    j["mode"] = train_mode_name(c.mode);
    j["clip_norm"] = c.clip_norm;
    j["seed"] = c.seed;
    j["chunk_len"] = c.chunk_len;
    j["sample_count"] = c.sample_count;
    j["checkpoint_every"] = c.checkpoint_every;
    j["no_self_transitions"] = c.no_self_transitions;
    j["table_lr_scale"] = c.table_lr_scale;
    return j;
}

TrainConfig config_from_json(const ordered_json& j, const ModelDims& dims) {
    TrainConfig c;
    c.dims = dims;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.iterations = j.value("iterations", c.iterations);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.tau_start = j.value("tau_start", c.tau_start);
    c.tau_end = j.value("tau_end", c.tau_end);
    c.anneal = j.value("anneal", c.anneal);
    c.mode = j.value("mode", std::string("hard-st")) == std::string("relaxed") ? TrainMode::Relaxed
                                                                               : TrainMode::HardST;
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.seed = j.value("seed", c.seed);
    c.chunk_len = j.value("chunk_len", c.chunk_len);
    c.sample_count = j.value("sample_count", c.sample_count);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.no_self_transitions = j.value("no_self_transitions", c.no_self_transitions);
    c.table_lr_scale = j.value("table_lr_scale", c.table_lr_scale);
    return c;
}

}  // namespace

void write_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
    std::string out(kMagic, 8);
    put_u32(out, kCheckpointVersion);
    std::uint32_t count = static_cast<std::uint32_t>(ckpt.theta.store().size() + ckpt.phi.store().size());
    put_u32(out, count);
    for (int i = 0; i < ckpt.theta.store().size(); ++i)
        put_tensor(out, "theta/" + ckpt.theta.store().name(i), ckpt.theta.store().value(i));
    for (int i = 0; i < ckpt.phi.store().size(); ++i)
        put_tensor(out, "phi/" + ckpt.phi.store().name(i), ckpt.phi.store().value(i));

    ordered_json meta;
    meta["format_version"] = kCheckpointVersion;
    meta["dims"] = {{"K", ckpt.dims.K}, {"M", ckpt.dims.M}, {"m", ckpt.dims.m},
                    {"h", ckpt.dims.h}, {"e", ckpt.dims.e}, {"q", ckpt.dims.q}};
    meta["no_self_transitions"] = ckpt.theta.no_self_transitions();
    meta["train_config"] = config_to_json(ckpt.config);
    if (ckpt.stats) {
        meta["norm_stats"] = {{"mean", ckpt.stats->mean}, {"std", ckpt.stats->std}};
    } else {
        meta["norm_stats"] = nullptr;
    }
    std::string blob = meta.dump();
    put_u32(out, static_cast<std::uint32_t>(blob.size()));
    out += blob;

    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw std::runtime_error("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    Reader reader(ss.str(), path);

    if (reader.bytes(8) != std::string(kMagic, 8))
        throw parse_error("'" + path + "': bad magic, expected SSNNCKP1");
    std::uint32_t version = reader.u32();
    if (version != kCheckpointVersion)
        throw schema_error("'" + path + "': unsupported checkpoint version " + std::to_string(version));

    std::uint32_t count = reader.u32();
    ParamStore theta_store, phi_store;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = reader.bytes(reader.u32());
        std::uint32_t rank = reader.u32();
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(reader.u32()));
        Tensor t(shape);
        for (std::int64_t j = 0; j < t.numel(); ++j) t[j] = reader.f64();
        t.require_finite("checkpoint tensor '" + name + "'");
        if (name.rfind("theta/", 0) == 0)
            theta_store.add(name.substr(6), std::move(t));
        else if (name.rfind("phi/", 0) == 0)
            phi_store.add(name.substr(4), std::move(t));
        else
            throw schema_error("'" + path + "': unknown tensor namespace in '" + name + "'");
    }

    std::string blob = reader.bytes(reader.u32());
    ordered_json meta = ordered_json::parse(blob, nullptr, false);
    if (meta.is_discarded()) throw parse_error("'" + path + "': malformed metadata JSON");

    ModelDims dims;
    dims.K = meta.at("dims").at("K").get<int>();
    dims.M = meta.at("dims").at("M").get<int>();
    dims.m = meta.at("dims").at("m").get<int>();
    dims.h = meta.at("dims").at("h").get<int>();
    dims.e = meta.at("dims").at("e").get<int>();
    dims.q = meta.at("dims").at("q").get<int>();

    bool no_self = meta.value("no_self_transitions", false);
    Checkpoint ckpt(dims, GenerativeParams(dims, std::move(theta_store), no_self),
                    InferenceParams(dims, std::move(phi_store)));
    ckpt.config = config_from_json(meta.at("train_config"), dims);
    if (!meta.at("norm_stats").is_null()) {
        NormStats stats;
        stats.mean = meta.at("norm_stats").at("mean").get<std::vector<double>>();
        stats.std = meta.at("norm_stats").at("std").get<std::vector<double>>();
        ckpt.stats = std::move(stats);
    }
    return ckpt;
}

}  // namespace ssnn
