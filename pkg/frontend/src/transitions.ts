// Client-side mirror of the server's legal transition relation.  The UI
// never invents transitions: it only enables a button when the server
// would accept the move, and the server remains the authority (a 409 is
// surfaced verbatim).

import type { BatchState } from './model.js'

export const TRANSITIONS: Record<BatchState, readonly BatchState[]> = {
    RECEIVED: ['HASHED'],
    HASHED: ['RECONCILED'],
    RECONCILED: ['SCANNED', 'REJECTED'],
    SCANNED: ['CATALOGED'],
    CATALOGED: ['PROFILED'],
    PROFILED: ['VERIFIED', 'UNVERIFIED'],
    VERIFIED: ['CONFIRMED', 'REJECTED'],
    UNVERIFIED: ['CONFIRMED', 'REJECTED'],
    REJECTED: [],
    CONFIRMED: [],
}

export interface EnabledActions {
    confirm: boolean
    reject: boolean
    retransfer: boolean
}

export function enabledActions(state: BatchState): EnabledActions {
    const successors = TRANSITIONS[state] ?? []
    return {
        confirm: successors.includes('CONFIRMED'),
        reject: successors.includes('REJECTED'),
        // Re-request is an operator action on an already-rejected batch,
        // not a state transition.
        retransfer: state === 'REJECTED',
    }
}
