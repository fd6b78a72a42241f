#include "scanrl/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace scanrl {

namespace {

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; i++) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; i++) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const unsigned char* p;
    std::size_t size;
    std::size_t off = 0;
    std::string path;

    void need(std::size_t n, const char* what) {
        if (off + n > size) {
            throw FormatError("ASC1 " + path + ": truncated " + what + " at byte " + std::to_string(off));
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(p[off]) | (static_cast<std::uint16_t>(p[off + 1]) << 8);
        off += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; i++) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; i++) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
};

}  // namespace

void write_checkpoint_file(const CheckpointData& data, const std::string& path) {
    std::string out;
    out.reserve(1 << 20);
    out.append("ASC1");
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& [name, tensor] : data.tensors) {
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(tensor.rank()));
        for (int d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
        const auto span = tensor.data();
        const std::size_t bytes = span.size() * sizeof(float);
        const std::size_t pos = out.size();
        out.resize(pos + bytes);
        std::memcpy(out.data() + pos, span.data(), bytes);
    }
    put_u32(out, static_cast<std::uint32_t>(data.rng_state.size()));
    out.append(data.rng_state);
    put_u64(out, data.iteration);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw FormatError("ASC1 " + path + ": cannot open for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw FormatError("ASC1 " + path + ": write failed");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw FormatError("ASC1 " + path + ": rename failed");
    }
}

CheckpointData read_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("ASC1 " + path + ": cannot open");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    Reader r{bytes.data(), bytes.size(), 0, path};

    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "ASC1", 4) != 0) {
        throw FormatError("ASC1 " + path + ": bad magic at byte 0");
    }
    r.off = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("ASC1 " + path + ": version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    }
    const std::uint32_t count = r.u32("tensor count");

    CheckpointData data;
    data.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; i++) {
        const std::uint16_t name_len = r.u16("tensor name length");
        r.need(name_len, "tensor name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.off), name_len);
        r.off += name_len;
        r.need(1, "tensor rank");
        const int rank = bytes[r.off++];
        Shape shape(rank);
        for (int d = 0; d < rank; d++) shape[d] = static_cast<int>(r.u32("tensor dim"));
        const std::int64_t n = numel(shape);
        r.need(static_cast<std::size_t>(n) * 4, "tensor data");
        std::vector<float> values(n);
        std::memcpy(values.data(), bytes.data() + r.off, static_cast<std::size_t>(n) * 4);
        r.off += static_cast<std::size_t>(n) * 4;
        data.tensors.emplace_back(std::move(name), Tensor<float>::from_data(std::move(shape), std::move(values)));
    }
    const std::uint32_t rng_len = r.u32("rng state length");
    r.need(rng_len, "rng state");
    data.rng_state.assign(reinterpret_cast<const char*>(bytes.data() + r.off), rng_len);
    r.off += rng_len;
    data.iteration = r.u64("iteration counter");
    return data;
}

namespace {

Tensor<float> vec_tensor(const std::vector<float>& v) {
    return Tensor<float>::from_data({static_cast<int>(v.size())}, std::vector<float>(v.begin(), v.end()));
}

void add_store(CheckpointData& data, const std::string& prefix, const ParamStore<float>& store) {
    for (std::size_t i = 0; i < store.size(); i++) {
        data.tensors.emplace_back(prefix + "/" + store.names[i], store.tensors[i]);
    }
}

void add_adam(CheckpointData& data, const std::string& prefix, AdamState<float>& opt,
              const ParamStore<float>& store) {
    for (std::size_t i = 0; i < store.size(); i++) {
        data.tensors.emplace_back(prefix + "/" + store.names[i] + "/m", vec_tensor(opt.moments1()[i]));
        data.tensors.emplace_back(prefix + "/" + store.names[i] + "/v", vec_tensor(opt.moments2()[i]));
    }
    data.tensors.emplace_back(prefix + "/step",
                              Tensor<float>::scalar(static_cast<float>(opt.step_count())));
}

}  // namespace

CheckpointData snapshot_trainer(Trainer& trainer) {
    CheckpointData data;
    NetworkBundle<float>& nets = trainer.nets();
    add_store(data, "actor", nets.actor.params());
    add_store(data, "critic", nets.critic.params());
    add_store(data, "actor_target", nets.actor_target.params());
    add_store(data, "critic_target", nets.critic_target.params());
    add_store(data, "gen", nets.generator.params());
    for (auto& [name, tensor] : nets.generator.buffers()) {
        data.tensors.emplace_back("gen/" + name, tensor);
    }
    add_adam(data, "adam/actor", trainer.actor_opt(), nets.actor.params());
    add_adam(data, "adam/critic", trainer.critic_opt(), nets.critic.params());
    add_adam(data, "adam/gen", trainer.gen_opt(), nets.generator.params());

    const RunningStats& stats = trainer.stats();
    data.tensors.emplace_back(
        "stats/values",
        Tensor<float>::from_data({3}, {stats.l_avg, stats.l_sq_avg, stats.initialized ? 1.0f : 0.0f}));

    const ReplayBuffer& replay = trainer.replay();
    const int steps = replay.expected_steps();
    const int samples = trainer.config().env.samples_per_segment;
    data.tensors.emplace_back("replay/count", Tensor<float>::scalar(static_cast<float>(replay.size())));
    for (std::size_t e = 0; e < replay.size(); e++) {
        const Episode& ep = replay.at(e);
        const std::string prefix = "replay/" + std::to_string(e);
        std::vector<float> actions(steps * 2), flags(steps), obs(static_cast<std::size_t>(steps) * samples),
            pos(static_cast<std::size_t>(steps) * samples * 2);
        for (int t = 0; t < steps; t++) {
            actions[2 * t] = ep.history.actions[t][0];
            actions[2 * t + 1] = ep.history.actions[t][1];
            flags[t] = static_cast<float>(ep.history.over_edge[t]);
            for (int k = 0; k < samples; k++) {
                obs[static_cast<std::size_t>(t) * samples + k] = ep.history.observations[t][k];
                pos[(static_cast<std::size_t>(t) * samples + k) * 2] = ep.history.probe_positions[t][k].x;
                pos[(static_cast<std::size_t>(t) * samples + k) * 2 + 1] = ep.history.probe_positions[t][k].y;
            }
        }
        data.tensors.emplace_back(prefix + "/actions", Tensor<float>::from_data({steps, 2}, std::move(actions)));
        data.tensors.emplace_back(prefix + "/obs", Tensor<float>::from_data({steps, samples}, std::move(obs)));
        data.tensors.emplace_back(prefix + "/flags", Tensor<float>::from_data({steps}, std::move(flags)));
        data.tensors.emplace_back(prefix + "/pos",
                                  Tensor<float>::from_data({steps, samples, 2}, std::move(pos)));
        data.tensors.emplace_back(prefix + "/img",
                                  Tensor<float>::scalar(static_cast<float>(ep.image_index)));
    }

    data.rng_state = trainer.rng().serialize();
    data.iteration = trainer.iteration();
    return data;
}

void save_checkpoint(Trainer& trainer, const std::string& path) {
    write_checkpoint_file(snapshot_trainer(trainer), path);
}

namespace {

class TensorIndex {
public:
    explicit TensorIndex(const CheckpointData& data) : data_(data) {
        for (std::size_t i = 0; i < data.tensors.size(); i++) index_[data.tensors[i].first] = i;
    }

    const Tensor<float>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw FormatError("checkpoint: missing tensor " + name);
        return data_.tensors[it->second].second;
    }

private:
    const CheckpointData& data_;
    std::unordered_map<std::string, std::size_t> index_;
};

void load_store(const TensorIndex& index, const std::string& prefix, ParamStore<float>& store) {
    for (std::size_t i = 0; i < store.size(); i++) {
        const Tensor<float>& src = index.get(prefix + "/" + store.names[i]);
        if (src.shape() != store.tensors[i].shape()) {
            throw FormatError("checkpoint: tensor " + prefix + "/" + store.names[i] + " has shape " +
                              shape_str(src.shape()) + ", expected " + shape_str(store.tensors[i].shape()));
        }
        std::copy(src.data().begin(), src.data().end(), store.tensors[i].data().begin());
    }
}

void load_adam(const TensorIndex& index, const std::string& prefix, AdamState<float>& opt,
               const ParamStore<float>& store) {
    for (std::size_t i = 0; i < store.size(); i++) {
        const Tensor<float>& m = index.get(prefix + "/" + store.names[i] + "/m");
        const Tensor<float>& v = index.get(prefix + "/" + store.names[i] + "/v");
        if (m.size() != static_cast<std::int64_t>(opt.moments1()[i].size()) || v.size() != m.size()) {
            throw FormatError("checkpoint: optimizer state size mismatch at " + prefix + "/" + store.names[i]);
        }
        std::copy(m.data().begin(), m.data().end(), opt.moments1()[i].begin());
        std::copy(v.data().begin(), v.data().end(), opt.moments2()[i].begin());
    }
    opt.set_step_count(static_cast<long>(index.get(prefix + "/step").value()));
}

}  // namespace

void restore_trainer(Trainer& trainer, const CheckpointData& data) {
    TensorIndex index(data);
    NetworkBundle<float>& nets = trainer.nets();
    load_store(index, "actor", nets.actor.params());
    load_store(index, "critic", nets.critic.params());
    load_store(index, "actor_target", nets.actor_target.params());
    load_store(index, "critic_target", nets.critic_target.params());
    load_store(index, "gen", nets.generator.params());
    for (auto& [name, tensor] : nets.generator.buffers()) {
        const Tensor<float>& src = index.get("gen/" + name);
        if (src.shape() != tensor.shape()) {
            throw FormatError("checkpoint: buffer gen/" + name + " has shape " + shape_str(src.shape()));
        }
        std::copy(src.data().begin(), src.data().end(), tensor.data().begin());
    }
    load_adam(index, "adam/actor", trainer.actor_opt(), nets.actor.params());
    load_adam(index, "adam/critic", trainer.critic_opt(), nets.critic.params());
    load_adam(index, "adam/gen", trainer.gen_opt(), nets.generator.params());

    {
        const Tensor<float>& s = index.get("stats/values");
        if (s.size() != 3) throw FormatError("checkpoint: stats/values must hold 3 entries");
        trainer.stats().l_avg = s.data()[0];
        trainer.stats().l_sq_avg = s.data()[1];
        trainer.stats().initialized = s.data()[2] != 0.0f;
    }

    const int steps = trainer.config().env.segments;
    const int samples = trainer.config().env.samples_per_segment;
    const std::size_t count = static_cast<std::size_t>(index.get("replay/count").value());
    trainer.replay().clear();
    for (std::size_t e = 0; e < count; e++) {
        const std::string prefix = "replay/" + std::to_string(e);
        const Tensor<float>& actions = index.get(prefix + "/actions");
        const Tensor<float>& obs = index.get(prefix + "/obs");
        const Tensor<float>& flags = index.get(prefix + "/flags");
        const Tensor<float>& pos = index.get(prefix + "/pos");
        if (actions.shape() != Shape{steps, 2} || obs.shape() != Shape{steps, samples} ||
            flags.shape() != Shape{steps} || pos.shape() != Shape{steps, samples, 2}) {
            throw FormatError("checkpoint: replay episode " + std::to_string(e) + " has unexpected shapes");
        }
        Episode ep;
        ep.image_index = static_cast<int>(index.get(prefix + "/img").value());
        for (int t = 0; t < steps; t++) {
            ep.history.actions.push_back({actions.data()[2 * t], actions.data()[2 * t + 1]});
            ep.history.over_edge.push_back(flags.data()[t] != 0.0f ? 1 : 0);
            std::vector<float> o(samples);
            std::vector<Vec2> p(samples);
            for (int k = 0; k < samples; k++) {
                o[k] = obs.data()[static_cast<std::size_t>(t) * samples + k];
                p[k].x = pos.data()[(static_cast<std::size_t>(t) * samples + k) * 2];
                p[k].y = pos.data()[(static_cast<std::size_t>(t) * samples + k) * 2 + 1];
            }
            ep.history.observations.push_back(std::move(o));
            ep.history.probe_positions.push_back(std::move(p));
        }
        trainer.replay().push(std::move(ep));
    }

    trainer.rng().deserialize(data.rng_state);
    trainer.set_iteration(data.iteration);
}

void load_checkpoint(Trainer& trainer, const std::string& path) {
    restore_trainer(trainer, read_checkpoint_file(path));
}

}  // namespace scanrl
