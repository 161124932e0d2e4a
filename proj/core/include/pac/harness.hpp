#pragma once

#include <span>

#include "pac/disk.hpp"
#include "pac/workload.hpp"

namespace pac {

/// Outcome of one injected attack, classified by when (and whether) the
/// engine surfaced it.
struct AttackOutcome {
    AttackAction action;
    enum class Result {
        detected_before_return,   // fault raised, no wrong byte ever escaped
        detected_at_checkpoint,   // wrong data returned first, fault came later
        undetected,               // workload ran on, nothing raised
    } result = Result::undetected;
    double time_to_detection_ms = 0.0;
    std::uint64_t ops_until_detection = 0;
};

struct AttackReport {
    std::vector<AttackOutcome> outcomes;
    std::uint64_t detected_before_return = 0;
    std::uint64_t detected_at_checkpoint = 0;
    std::uint64_t undetected = 0;

    bool all_before_return() const {
        return detected_at_checkpoint == 0 && undetected == 0 &&
               detected_before_return == outcomes.size();
    }
    std::string summary() const;
};

/// Injects `injections` randomized replay/corrupt/swap/drop_write attacks into
/// a live workload, checking every read against a shadow copy of the
/// plaintext. Detection means a fault; wrong bytes that reach the caller are
/// recorded whether or not a fault follows.
AttackReport run_attack_suite(BlockEngine& engine, AdversarialDisk& disk,
                              const WorkloadSpec& spec, unsigned injections);

/// Scripted variant: actions fire in order, each probed the same way.
AttackReport run_attack_script(BlockEngine& engine, AdversarialDisk& disk,
                               const WorkloadSpec& spec,
                               std::span<const AttackAction> script);

struct CrashStep {
    enum class Kind {
        ops,            // N random ops
        fsync,          // drain + flush + seal; also the durability snapshot
        crash,          // lose volatile state, revert disk to last flush, recover
        rollback,       // adversary: revert disk+metadata N epochs, then recover
        seal_rollback,  // adversary: also revert the sealed record N epochs
    } kind = Kind::ops;
    std::uint64_t n = 0;
};

std::vector<CrashStep> parse_crash_schedule(const std::string& text);
std::vector<std::vector<CrashStep>> random_crash_schedules(unsigned count,
                                                           std::uint64_t seed);

struct CrashReport {
    unsigned schedules_run = 0;
    unsigned clean_recoveries = 0;    // benign crash, state matched exactly
    unsigned rollbacks_detected = 0;  // adversarial step raised the right fault
    std::vector<std::string> failures;  // anything else, with diagnostics

    bool clean() const { return failures.empty(); }
    std::string summary() const;
};

/// Runs each schedule against a fresh engine in `state_dir`, tracking the
/// last-fsynced plaintext of every block. Benign crashes must recover to
/// exactly that state; adversarial rollbacks must raise a fault.
CrashReport run_crash_suite(const EngineConfig& cfg, const std::string& state_dir,
                            std::span<const std::vector<CrashStep>> schedules,
                            std::uint64_t seed);

}  // namespace pac
