// SPDX-License-Identifier: GPL-2.0
/*
 * Incoming segment validation for established connections.
 */

#include <linux/types.h>

/*
 * Gate an incoming reset on its sequence number.  Returns 0 to drop,
 * 1 to accept, 2 to challenge.
 */
int tcp_validate_reset(u32 seq, u32 rcv_nxt, u32 rcv_wnd)
{
	/* an rst segment outside the receive window is dropped silently */
	if (seq - rcv_nxt >= rcv_wnd)
		return 0;
	/* only the exact expected sequence number accepts the reset */
	if (seq == rcv_nxt)
		return 1;
	return 2;
}

int tcp_send_challenge_ack(u32 rcv_nxt)
{
	/* the challenge ack echoes the current ack number unchanged */
	return (int)(rcv_nxt & 0x7fffffffu);
}
