#pragma once

#include "trellis/digest.hpp"
#include "trellis/gateway.hpp"
#include "trellis/log.hpp"
#include "trellis/prompts.hpp"
#include "trellis/rng.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>

// Chat-completion wire protocol adapter: JSON request with model name,
// messages and temperature; JSON response with choices. Credentials come
// from the environment only (never from config files).

namespace trellis {

struct RetryPolicy {
    int max_retries = 3;       // retries after the first attempt
    int base_delay_ms = 500;   // doubled per retry
    double growth = 2.0;
};

struct EndpointConfig {
    std::string base_url;                      // e.g. http://localhost:8080
    std::string path = "/v1/chat/completions";
    std::string model = "default";
    std::string api_key_env = "TRELLIS_API_KEY";
    int timeout_sec = 60;
    RetryPolicy retry;
    int max_in_flight = 4;
    bool request_logprobs = false;             // ask for token logprobs (PRM use)
};

class ChatClient {
public:
    explicit ChatClient(EndpointConfig config) : config_(std::move(config)) {
        if (config_.base_url.empty()) throw ConfigError("endpoint base_url is empty");
        gate_ = std::make_unique<std::counting_semaphore<>>(
            std::max(1, config_.max_in_flight));
    }

    const EndpointConfig& config() const { return config_; }

    // First message text of the chat-completion response.
    std::string complete(const std::string& prompt, double temperature) {
        nlohmann::json resp = complete_raw(prompt, temperature, /*want_logprobs=*/false);
        return extract_text(resp);
    }

    // Full parsed response body; throws RemoteUnavailable after the retry
    // budget is spent and ProtocolError for malformed bodies.
    nlohmann::json complete_raw(const std::string& prompt, double temperature, bool want_logprobs) {
        if (temperature <= 0.0) throw std::invalid_argument("temperature must be > 0");
        nlohmann::json body{
            {"model", config_.model},
            {"messages", {{{"role", "user"}, {"content", prompt}}}},
            {"temperature", temperature},
        };
        if (want_logprobs) {
            body["logprobs"] = true;
            body["top_logprobs"] = 8;
        }
        const std::string corr = correlation_id();
        const std::string payload = body.dump();

        gate_->acquire();
        struct Release {
            std::counting_semaphore<>* g;
            ~Release() { g->release(); }
        } release{gate_.get()};

        int delay_ms = config_.retry.base_delay_ms;
        std::string last_error;
        for (int attempt = 0; attempt <= config_.retry.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
                delay_ms = static_cast<int>(delay_ms * config_.retry.growth);
            }
            logging::debug("[" + corr + "] POST " + config_.path + " attempt " +
                           std::to_string(attempt + 1));
            auto result = post(payload);
            if (!result) {
                last_error = "transport error: " + httplib::to_string(result.error());
                logging::warn("[" + corr + "] " + last_error);
                continue;
            }
            if (result->status >= 500 || result->status == 429 || result->status == 408) {
                last_error = "HTTP " + std::to_string(result->status);
                logging::warn("[" + corr + "] " + last_error + ", retrying");
                continue;
            }
            if (result->status != 200)
                throw ProtocolError("[" + corr + "] HTTP " + std::to_string(result->status) + ": " +
                                    result->body);
            logging::debug("[" + corr + "] " + std::to_string(result->body.size()) + " bytes");
            try {
                return nlohmann::json::parse(result->body);
            } catch (const nlohmann::json::exception& e) {
                throw ProtocolError("[" + corr + "] response body is not JSON: " + e.what());
            }
        }
        throw RemoteUnavailable("[" + corr + "] " + config_.base_url + config_.path +
                                " unavailable after " + std::to_string(config_.retry.max_retries) +
                                " retries: " + last_error);
    }

    static std::string extract_text(const nlohmann::json& resp) {
        try {
            return resp.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("response lacks choices[0].message.content: ") + e.what());
        }
    }

private:
    httplib::Result post(const std::string& payload) {
        httplib::Client cli(config_.base_url);
        cli.set_connection_timeout(config_.timeout_sec, 0);
        cli.set_read_timeout(config_.timeout_sec, 0);
        httplib::Headers headers;
        if (const char* key = api_key(); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
        return cli.Post(config_.path, headers, payload, "application/json");
    }

    const char* api_key() const {
        return config_.api_key_env.empty() ? nullptr : std::getenv(config_.api_key_env.c_str());
    }

    std::string correlation_id() {
        static std::atomic<std::uint64_t> counter{0};
        const auto n = counter.fetch_add(1, std::memory_order_relaxed);
        return digest_hex(config_.base_url + "#" + std::to_string(n)).substr(0, 12);
    }

    EndpointConfig config_;
    std::unique_ptr<std::counting_semaphore<>> gate_;
};

// Single-shot convenience wrapper used by the spec-level operation.
inline std::string remote_generate(const EndpointConfig& endpoint, const std::string& prompt,
                                   double temperature) {
    ChatClient client(endpoint);
    return client.complete(prompt, temperature);
}

// ---------------------------------------------------------------------------
// Remote actor
// ---------------------------------------------------------------------------

class RemoteActor : public ActorModel {
public:
    RemoteActor(std::string id, EndpointConfig endpoint)
        : id_(std::move(id)), client_(std::move(endpoint)) {}

    const std::string& id() const override { return id_; }

    ReasoningStep generate(const Problem& problem,
                           std::span<const ReasoningStep> prefix,
                           ActionKind action,
                           double temperature) override {
        const bool full = action == ActionKind::Answer && prefix.empty();
        const std::string tid = full ? "full_solution" : "step:" + std::string(to_string(action));
        const std::string prompt = build_prompt(tid, problem, prefix);
        std::string text = client_.complete(prompt, temperature);
        if (text.empty()) throw ProtocolError("actor " + id_ + " returned empty content");
        return ReasoningStep{action, std::move(text), id_};
    }

private:
    std::string id_;
    ChatClient client_;
};

// ---------------------------------------------------------------------------
// Remote reward model
// ---------------------------------------------------------------------------

// Two score channels, per the endpoint's capabilities:
//  - logprob channel: score = probability mass of the affirmative token in
//    the first generated position, when the response carries logprobs;
//  - structured channel: parse the message content as a critique quadruple
//    and take its score field.
class RemoteReward : public RewardModel {
public:
    RemoteReward(std::string id, EndpointConfig endpoint)
        : id_(std::move(id)), client_(std::move(endpoint)) {}

    const std::string& id() const override { return id_; }

    StepCritique critique(const Problem& problem,
                          std::span<const ReasoningStep> prefix,
                          const ReasoningStep& step) override {
        const std::string prompt =
            build_prompt("critique_step", problem, prefix,
                         {{"action", std::string(to_string(step.action))}, {"step", step.content}});
        nlohmann::json resp =
            client_.complete_raw(prompt, 1.0, client_.config().request_logprobs);

        if (auto score = affirmative_mass(resp)) {
            StepCritique c{step.content,
                           *score >= 0.5 ? StepLabel::CorrectStep : StepLabel::LogicalReasoningError,
                           "affirmative-token probability", *score};
            check_range(c.score);
            return c;
        }
        return parse_structured(ChatClient::extract_text(resp), step);
    }

private:
    // Sum of exp(logprob) over "yes"-like entries of the first generated
    // token's top_logprobs, if the endpoint exposed them.
    static std::optional<double> affirmative_mass(const nlohmann::json& resp) {
        try {
            const auto& content = resp.at("choices").at(0).at("logprobs").at("content");
            if (!content.is_array() || content.empty()) return std::nullopt;
            const auto& top = content.at(0).at("top_logprobs");
            double mass = 0.0;
            for (const auto& entry : top) {
                std::string tok = entry.at("token").get<std::string>();
                while (!tok.empty() && (tok.front() == ' ' || tok.front() == '\n')) tok.erase(0, 1);
                for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
                if (tok == "yes") mass += std::exp(entry.at("logprob").get<double>());
            }
            return mass;
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
    }

    StepCritique parse_structured(const std::string& text, const ReasoningStep& step) const {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError("critique content is not JSON: " + std::string(e.what()));
        }
        StepCritique c;
        try {
            c.content = j.value("content", step.content);
            const std::string label = j.at("label").get<std::string>();
            auto parsed = step_label_from_string(label);
            if (!parsed) throw ProtocolError("unknown critique label: " + label);
            c.label = *parsed;
            c.explanation = j.value("explanation", std::string{});
            c.score = j.at("score").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError("critique quadruple malformed: " + std::string(e.what()));
        }
        check_range(c.score);
        return c;
    }

    static void check_range(double score) {
        if (score < 0.0 || score > 1.0)
            throw ProtocolError("critique score out of [0,1]: " + std::to_string(score));
    }

    std::string id_;
    ChatClient client_;
};

} // namespace trellis
