#include "bmpc/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bmpc {

ReplayBuffer::ReplayBuffer(std::size_t capacity_transitions) : capacity_(capacity_transitions) {
    if (capacity_ == 0) {
        throw std::invalid_argument("replay buffer: capacity must be positive");
    }
}

void ReplayBuffer::push_episode(std::vector<TransitionRecord> records) {
    if (records.empty()) {
        return;
    }
    const auto id = records.front().episode;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        if (r.episode != id) {
            throw std::invalid_argument("replay buffer: records of one push must share an episode id");
        }
        if (r.step != records.front().step + i) {
            throw std::invalid_argument("replay buffer: records must be consecutive steps");
        }
        if (!std::isfinite(r.reward)) {
            throw std::invalid_argument("replay buffer: non-finite reward");
        }
        if (r.pi.dim() != r.action.size() || r.pi.log_std.size() != r.action.size()) {
            throw std::invalid_argument("replay buffer: every record needs an expert distribution");
        }
    }
    std::unique_lock lock(mutex_);
    if (find(id) != nullptr) {
        throw std::invalid_argument("replay buffer: episode " + std::to_string(id) + " already stored");
    }
    size_ += records.size();
    episodes_.push_back({id, std::move(records)});
    while (size_ > capacity_ && episodes_.size() > 1) {
        size_ -= episodes_.front().records.size();
        episodes_.pop_front();
    }
}

const ReplayBuffer::Episode* ReplayBuffer::find(std::uint64_t id) const {
    // Episode ids are pushed in increasing order in practice; fall back to a scan.
    auto it = std::lower_bound(episodes_.begin(), episodes_.end(), id,
                               [](const Episode& e, std::uint64_t v) { return e.id < v; });
    if (it != episodes_.end() && it->id == id) {
        return &*it;
    }
    for (const auto& e : episodes_) {
        if (e.id == id) {
            return &e;
        }
    }
    return nullptr;
}

std::size_t ReplayBuffer::size() const {
    std::shared_lock lock(mutex_);
    return size_;
}

std::size_t ReplayBuffer::episode_count() const {
    std::shared_lock lock(mutex_);
    return episodes_.size();
}

std::vector<std::uint64_t> ReplayBuffer::episode_ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::uint64_t> ids;
    for (const auto& e : episodes_) {
        ids.push_back(e.id);
    }
    return ids;
}

std::size_t ReplayBuffer::valid_starts(std::size_t horizon) const {
    std::shared_lock lock(mutex_);
    std::size_t n = 0;
    for (const auto& e : episodes_) {
        if (e.records.size() > horizon) {
            n += e.records.size() - horizon;
        }
    }
    return n;
}

SegmentBatch ReplayBuffer::sample_segments(std::size_t count, std::size_t horizon,
                                           std::mt19937_64& rng) const {
    std::shared_lock lock(mutex_);
    std::vector<std::size_t> cumulative;
    cumulative.reserve(episodes_.size());
    std::size_t total = 0;
    for (const auto& e : episodes_) {
        total += e.records.size() > horizon ? e.records.size() - horizon : 0;
        cumulative.push_back(total);
    }
    if (total == 0) {
        throw std::runtime_error("replay buffer: no episode holds " + std::to_string(horizon + 1) +
                                 " consecutive transitions");
    }
    SegmentBatch batch;
    batch.horizon = horizon;
    batch.refs.reserve(count);
    batch.rows.reserve(count);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t u = pick(rng);
        const auto e = static_cast<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
        const std::size_t start = u - (e == 0 ? 0 : cumulative[e - 1]);
        const auto& ep = episodes_[e];
        batch.refs.push_back({ep.id, start});
        batch.rows.emplace_back(ep.records.begin() + static_cast<std::ptrdiff_t>(start),
                                ep.records.begin() + static_cast<std::ptrdiff_t>(start + horizon + 1));
    }
    return batch;
}

SegmentBatch ReplayBuffer::gather(const std::vector<SegmentRef>& refs, std::size_t horizon) const {
    std::shared_lock lock(mutex_);
    SegmentBatch batch;
    batch.horizon = horizon;
    batch.refs = refs;
    for (const auto& ref : refs) {
        const auto* ep = find(ref.episode);
        if (ep == nullptr || ref.start + horizon >= ep->records.size()) {
            throw std::out_of_range("replay buffer: segment no longer available");
        }
        batch.rows.emplace_back(ep->records.begin() + static_cast<std::ptrdiff_t>(ref.start),
                                ep->records.begin() + static_cast<std::ptrdiff_t>(ref.start + horizon + 1));
    }
    return batch;
}

bool ReplayBuffer::update_pi(std::uint64_t episode, std::size_t step, const DiagGaussian& pi,
                             std::int64_t version) {
    std::unique_lock lock(mutex_);
    const auto* ep = find(episode);
    if (ep == nullptr) {
        return false;
    }
    auto& records = const_cast<Episode*>(ep)->records;
    const std::size_t first = records.front().step;
    if (step < first || step - first >= records.size()) {
        return false;
    }
    auto& rec = records[step - first];
    if (pi.dim() != rec.action.size()) {
        throw std::invalid_argument("replay buffer: expert distribution has wrong dimension");
    }
    rec.pi = pi;
    rec.pi_version = version;
    return true;
}

std::vector<std::size_t> ReplayBuffer::freshness_histogram(
    std::int64_t current_step, const std::vector<std::int64_t>& edges) const {
    std::shared_lock lock(mutex_);
    std::vector<std::size_t> counts(edges.size() + 1, 0);
    for (const auto& e : episodes_) {
        for (const auto& r : e.records) {
            const auto age = current_step - r.pi_version;
            const auto bin = static_cast<std::size_t>(
                std::upper_bound(edges.begin(), edges.end(), age) - edges.begin());
            ++counts[bin];
        }
    }
    return counts;
}

void ReanalyzeConfig::validate() const {
    if (batch == 0) {
        throw std::invalid_argument("reanalyze config: batch must be at least 1");
    }
    if (!(log_std_min < log_std_max)) {
        throw std::invalid_argument("reanalyze config: log_std_min must be below log_std_max");
    }
    if (horizon == 0) {
        throw std::invalid_argument("reanalyze config: horizon must be at least 1");
    }
}

double remap_log_std(double log_std, double from_min, double from_max, double to_min,
                     double to_max) {
    return to_min + (log_std - from_min) / (from_max - from_min) * (to_max - to_min);
}

LatentModel::Prior WidenedPrior::prior(const Tensor& z) const {
    auto p = base_.prior(z);
    const auto& c = base_.config();
    for (auto& v : p.log_std.values()) {
        v = remap_log_std(v, c.log_std_min, c.log_std_max, min_, max_);
    }
    return p;
}

Reanalyzer::Reanalyzer(ReanalyzeConfig config, PlannerConfig planner)
    : config_(config), planner_([&] {
          planner.horizon = config.horizon;
          return planner;
      }()) {
    config_.validate();
}

bool Reanalyzer::due(std::int64_t update_step) const {
    return config_.interval > 0 && update_step > 0 &&
           update_step % static_cast<std::int64_t>(config_.interval) == 0;
}

namespace {

std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Reanalyzer::plan_seed(std::uint64_t tick_seed, std::uint64_t episode, std::size_t step) {
    return splitmix(splitmix(splitmix(tick_seed) ^ episode) ^ static_cast<std::uint64_t>(step));
}

DiagGaussian Reanalyzer::replan(const WorldModel& model, const std::vector<double>& obs,
                                std::uint64_t seed) const {
    const WidenedPrior widened(model, config_.log_std_min, config_.log_std_max);
    const auto z = model.encode(obs);
    return planner_.plan(widened, z, std::nullopt, seed).first_step;
}

ReanalyzeStats Reanalyzer::tick(ReplayBuffer& buffer, const WorldModel& model,
                                const std::vector<SegmentRef>& refs, std::size_t horizon,
                                std::int64_t update_step, std::uint64_t seed) const {
    ReanalyzeStats stats;
    stats.ticks = 1;
    const std::size_t count = std::min(config_.batch, refs.size());
    std::vector<SegmentRef> chosen(refs.begin(), refs.begin() + static_cast<std::ptrdiff_t>(count));
    SegmentBatch batch;
    try {
        batch = buffer.gather(chosen, horizon);
    } catch (const std::out_of_range&) {
        // Some segment was evicted meanwhile; take the survivors one by one.
        for (const auto& ref : chosen) {
            try {
                auto one = buffer.gather({ref}, horizon);
                batch.refs.push_back(ref);
                batch.rows.push_back(std::move(one.rows.front()));
            } catch (const std::out_of_range&) {
                ++stats.evicted;
            }
        }
    }
    for (std::size_t i = 0; i < batch.rows.size(); ++i) {
        ++stats.segments;
        for (std::size_t t = 0; t < batch.rows[i].size(); ++t) {
            const auto& rec = batch.rows[i][t];
            try {
                const auto pi = replan(model, rec.obs, plan_seed(seed, rec.episode, rec.step));
                if (buffer.update_pi(rec.episode, rec.step, pi, update_step)) {
                    ++stats.states;
                } else {
                    ++stats.evicted;
                }
            } catch (const std::exception&) {
                ++stats.failures;
            }
        }
    }
    return stats;
}

ReanalyzeWorker::ReanalyzeWorker(const Reanalyzer& reanalyzer, ReplayBuffer& buffer)
    : reanalyzer_(reanalyzer), buffer_(buffer), thread_([this] { run(); }) {}

ReanalyzeWorker::~ReanalyzeWorker() {
    {
        std::lock_guard lock(mutex_);
        stop_ = true;
    }
    wake_.notify_all();
    thread_.join();
}

void ReanalyzeWorker::submit(std::shared_ptr<const WorldModel> snapshot, std::vector<SegmentRef> refs,
                             std::size_t horizon, std::int64_t update_step, std::uint64_t seed) {
    {
        std::lock_guard lock(mutex_);
        jobs_.push_back({std::move(snapshot), std::move(refs), horizon, update_step, seed});
    }
    wake_.notify_one();
}

void ReanalyzeWorker::drain() {
    std::unique_lock lock(mutex_);
    idle_.wait(lock, [this] { return jobs_.empty() && !busy_; });
}

ReanalyzeStats ReanalyzeWorker::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

void ReanalyzeWorker::run() {
    for (;;) {
        Job job;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [this] { return stop_ || !jobs_.empty(); });
            if (jobs_.empty()) {
                return;
            }
            job = std::move(jobs_.front());
            jobs_.pop_front();
            busy_ = true;
        }
        const auto s = reanalyzer_.tick(buffer_, *job.snapshot, job.refs, job.horizon,
                                        job.update_step, job.seed);
        {
            std::lock_guard lock(mutex_);
            stats_.ticks += s.ticks;
            stats_.segments += s.segments;
            stats_.states += s.states;
            stats_.failures += s.failures;
            stats_.evicted += s.evicted;
            busy_ = false;
        }
        idle_.notify_all();
    }
}

}  // namespace bmpc
